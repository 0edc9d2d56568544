//! Identify length and angle deviations from simulated position measurements,
//! first without noise and then with 0.1 mm measurement noise.

use planar_calib::{
    generate_optimal_plan, identify, simulate_measurements, IdentifyOptions, ManipulatorModel,
    NoiseSpec, ParameterDeviation, PlanOptions,
};

fn report(label: &str, truth: &ParameterDeviation, found: &ParameterDeviation) {
    println!("{label}");
    println!("  joint   dl true   dl found   dq true(deg)  dq found(deg)");
    let (tq, fq) = (truth.joint_offsets(), found.joint_offsets());
    for i in 0..truth.links() {
        println!(
            "  {:>5} {:9.4} {:10.4} {:13.4} {:14.4}",
            i + 1,
            truth.dl[i],
            found.dl[i],
            tq[i].to_degrees(),
            fq[i].to_degrees()
        );
    }
}

fn main() -> planar_calib::Result<()> {
    let model = ManipulatorModel::new(vec![260.0, 180.0, 120.0, 100.0])?;
    let dq: Vec<f64> = [0.5, -0.5, 0.7, -0.3]
        .iter()
        .map(|d: &f64| d.to_radians())
        .collect();
    let truth = ParameterDeviation::from_joint_offsets(vec![0.4, -0.3, 0.2, -0.1], &dq)?;
    let plan = generate_optimal_plan(&model, 12, &PlanOptions::default())?;

    for sigma in [0.0, 0.1] {
        let meas = simulate_measurements(&model, &truth, &plan, &NoiseSpec::new(sigma, 7)?)?;
        let res = identify(&model, &plan, &meas, &IdentifyOptions::default())?;
        report(
            &format!("sigma = {sigma} mm, 12 configurations"),
            &truth,
            &res.deviation,
        );
        println!(
            "  {} iterations, residual norm {:.3e} mm, converged: {}\n",
            res.iterations, res.final_residual_norm, res.converged
        );
    }
    Ok(())
}
