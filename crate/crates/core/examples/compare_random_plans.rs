//! Rank an optimal plan among random plans by Monte Carlo accuracy, then show
//! how the optimal-plan accuracy shrinks with the number of points.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use planar_calib::{
    compare_plans, generate_optimal_plan, random_plan, sweep_points, ManipulatorModel, NoiseSpec,
    ParameterDeviation, PlanOptions,
};

fn main() -> planar_calib::Result<()> {
    let model = ManipulatorModel::new(vec![260.0, 180.0, 120.0, 100.0])?;
    let truth = ParameterDeviation::zero(4);
    let noise = NoiseSpec::new(0.1, 42)?;
    let mut rng = ChaCha8Rng::seed_from_u64(42);

    let mut plans = vec![generate_optimal_plan(&model, 10, &PlanOptions::default())?];
    for _ in 0..9 {
        plans.push(random_plan(4, 10, &mut rng)?);
    }
    let cmp = compare_plans(&model, &truth, &plans, &noise, 1000)?;
    println!("rank  plan  det(D')   inefficiency");
    for (rank, e) in cmp.entries.iter().enumerate() {
        let tag = if e.index == 0 { " (optimal)" } else { "" };
        println!(
            "{:>4} {:>5} {:8.4} {:13.3}{tag}",
            rank + 1,
            e.index,
            e.score.det_d,
            e.inefficiency
        );
    }

    println!("\npoints   sigma dl_1 (mm)   ratio to previous");
    let sweep = sweep_points(
        &model,
        &truth,
        &[4, 8, 16, 32],
        &PlanOptions::default(),
        &noise,
        2000,
    )?;
    let mut prev: Option<f64> = None;
    for s in &sweep {
        let v = s.parameters[4].empirical_std;
        let ratio = prev.map_or(String::new(), |p| format!("{:.3}", v / p));
        println!("{:>6} {:17.5} {:>19}", s.points, v, ratio);
        prev = Some(v);
    }
    Ok(())
}
