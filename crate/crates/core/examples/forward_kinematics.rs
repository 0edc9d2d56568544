//! End-effector position and Jacobian of a four-link arm, nominal and with
//! small geometric deviations.

use planar_calib::{
    forward_kinematics, jacobian, JointConfiguration, ManipulatorModel, ParameterDeviation,
};

fn main() -> planar_calib::Result<()> {
    let model = ManipulatorModel::new(vec![260.0, 180.0, 120.0, 100.0])?;
    let config = JointConfiguration::from_degrees(&[30.0, -45.0, 60.0, 10.0])?;
    let nominal = ParameterDeviation::zero(model.links());
    let dq: Vec<f64> = [0.5, -0.5, 0.7, -0.3]
        .iter()
        .map(|d: &f64| d.to_radians())
        .collect();
    let actual = ParameterDeviation::from_joint_offsets(vec![0.4, -0.3, 0.2, -0.1], &dq)?;

    let p0 = forward_kinematics(&model, &config, &nominal)?;
    let p1 = forward_kinematics(&model, &config, &actual)?;
    println!("nominal  x = {:10.4} mm  y = {:10.4} mm", p0.x, p0.y);
    println!("deviated x = {:10.4} mm  y = {:10.4} mm", p1.x, p1.y);
    println!(
        "position error {:.4} mm",
        ((p1.x - p0.x).powi(2) + (p1.y - p0.y).powi(2)).sqrt()
    );

    // first-order prediction of the same error
    let jac = jacobian(&model, &config, &nominal)?;
    let predicted = &jac * actual.to_vector();
    println!(
        "linearized   dx = {:.4}  dy = {:.4}",
        predicted[0], predicted[1]
    );
    println!(
        "exact        dx = {:.4}  dy = {:.4}",
        p1.x - p0.x,
        p1.y - p0.y
    );
    println!("\nJacobian columns (dtheta_1..4, dl_1..4):\n{jac:.4}");
    Ok(())
}
