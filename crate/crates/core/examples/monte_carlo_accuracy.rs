//! Monte Carlo check of identification accuracy for a two-link arm: empirical
//! standard deviations over 10^4 noisy trials against the analytic values.

use planar_calib::{
    generate_optimal_plan, run_trials, ManipulatorModel, NoiseSpec, ParameterDeviation, PlanOptions,
};

fn main() -> planar_calib::Result<()> {
    let model = ManipulatorModel::new(vec![260.0, 180.0])?;
    let truth = ParameterDeviation::from_joint_offsets(
        vec![0.4, -0.3],
        &[0.5f64.to_radians(), -0.5f64.to_radians()],
    )?;
    let noise = NoiseSpec::new(0.1, 2024)?;

    for m in [3, 20] {
        let plan = generate_optimal_plan(&model, m, &PlanOptions::default())?;
        let stats = run_trials(&model, &truth, &plan, &noise, 10_000)?;
        println!(
            "{m} points, {} trials ({} excluded)",
            stats.trials, stats.excluded
        );
        for p in &stats.parameters {
            let k = if p.name.starts_with("dtheta") {
                180.0 / std::f64::consts::PI
            } else {
                1.0
            };
            println!(
                "  {:<9} empirical {:.5}  analytic {:.5}  bias {:+.1e}",
                p.name,
                p.empirical_std * k,
                p.analytic_std * k,
                p.mean_error * k
            );
        }
    }
    Ok(())
}
