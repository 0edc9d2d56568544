//! Closed-form optimal plans: the joint angles, the vanishing condition sums
//! and the resulting scores, compared with a random plan of the same size.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use planar_calib::{
    condition_residuals, generate_optimal_plan, random_plan, score_plan, ManipulatorModel,
    PlanOptions,
};

fn main() -> planar_calib::Result<()> {
    let model = ManipulatorModel::new(vec![260.0, 180.0, 120.0, 100.0])?;
    let plan = generate_optimal_plan(&model, 6, &PlanOptions::default())?;

    println!("optimal 6-point plan (degrees):");
    for row in plan.to_degrees() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:8.2}")).collect();
        println!("  {}", cells.join(" "));
    }
    println!("condition sums:");
    for c in condition_residuals(&plan) {
        println!(
            "  joints {:>2}: cos {:+.1e}  sin {:+.1e}",
            c.label(),
            c.cos_sum,
            c.sin_sum
        );
    }

    let optimal = score_plan(&model, &plan)?;
    let random = score_plan(
        &model,
        &random_plan(4, 6, &mut ChaCha8Rng::seed_from_u64(1))?,
    )?;
    println!("\n            det(C')   det(S')   det(D')");
    println!(
        "optimal  {:9.4} {:9.4} {:9.4}",
        optimal.det_c, optimal.det_s, optimal.det_d
    );
    println!(
        "random   {:9.4} {:9.4} {:9.4}",
        random.det_c, random.det_s, random.det_d
    );
    Ok(())
}
