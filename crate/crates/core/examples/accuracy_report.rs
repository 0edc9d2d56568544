//! Predicted parameter standard deviations for optimal and random plans.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use planar_calib::{
    analytic_optimal_stddev, covariance, generate_optimal_plan, random_plan, ManipulatorModel,
    PlanOptions,
};

fn main() -> planar_calib::Result<()> {
    let model = ManipulatorModel::new(vec![260.0, 180.0, 120.0, 100.0])?;
    let sigma = 0.1;
    let m = 10;
    let optimal = covariance(
        &model,
        &generate_optimal_plan(&model, m, &PlanOptions::default())?,
        sigma,
    )?;
    let random = covariance(
        &model,
        &random_plan(4, m, &mut ChaCha8Rng::seed_from_u64(3))?,
        sigma,
    )?;
    let bound = analytic_optimal_stddev(&model, m, sigma)?;

    println!("sigma = {sigma} mm, {m} configurations");
    println!("link  dtheta optimal  dtheta random   dl optimal   dl random   (deg, mm)");
    let (ot, rt) = (optimal.sigma_theta_deg(), random.sigma_theta_deg());
    for i in 0..model.links() {
        println!(
            "{:>4} {:15.5} {:14.5} {:12.5} {:11.5}",
            i + 1,
            ot[i],
            rt[i],
            optimal.sigma_l[i],
            random.sigma_l[i]
        );
    }
    println!("closed-form bound for dl: {:.5} mm", bound.sigma_l[0]);
    Ok(())
}
