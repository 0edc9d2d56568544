//! Numeric plan search when the closed-form plan violates joint limits.

use planar_calib::{
    generate_optimal_plan, optimize_plan_numeric, score_plan, JointLimits, ManipulatorModel,
    NumericOptions, PlanOptions,
};

fn main() -> planar_calib::Result<()> {
    let model = ManipulatorModel::new(vec![260.0, 180.0, 120.0])?;
    let closed = generate_optimal_plan(&model, 6, &PlanOptions::default())?;
    println!(
        "closed-form det(D') = {:.6}",
        score_plan(&model, &closed)?.det_d
    );

    for limit in [150.0, 90.0, 30.0] {
        let limits =
            JointLimits::from_degrees(&[None, Some((-limit, limit)), Some((-limit, limit))]);
        let found = optimize_plan_numeric(&model, 6, &limits, &NumericOptions::default())?;
        println!(
            "joints 2-3 within +/-{limit:>5.1} deg: det(D') = {:.6}, condition residual {:.2e} (start {})",
            found.score.det_d, found.score.condition_residual, found.start
        );
    }
    Ok(())
}
