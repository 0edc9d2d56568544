//! Monte Carlo validation of the analytic accuracy predictions.
//!
//! Each trial synthesizes measurements with the full nonlinear model plus iid
//! Gaussian noise, runs [`identify`], and records the estimation error. Trial
//! `t` draws its noise from ChaCha8 stream `t` under the master seed, so
//! results are identical for serial and parallel runs with any thread count.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accuracy::{analytic_optimal_stddev, covariance};
use crate::design::{generate_optimal_plan, score_plan, PlanOptions, PlanScore};
use crate::error::{check_dim, CalibError, Result};
use crate::identification::{
    identify, stacked_jacobian, CalibrationPlan, IdentifyOptions, MeasurementSet, RANK_TOLERANCE,
};
use crate::kinematics::{forward_kinematics, ManipulatorModel, ParameterDeviation};

/// Excluded-trial fraction above which a run is flagged.
pub const EXCLUSION_ALARM_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Measurement stddev per coordinate, mm.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(CalibError::InvalidInput(format!(
                "noise sigma must be non-negative, got {sigma}"
            )));
        }
        Ok(Self { sigma, seed })
    }

    /// Independent generator for trial `t`.
    pub fn trial_rng(&self, trial: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterKind {
    /// Cumulative angle deviation `Δθ_i`, rad.
    Angle,
    /// Length deviation `Δl_i`, mm.
    Length,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterStats {
    pub name: String,
    pub kind: ParameterKind,
    pub truth: f64,
    /// Mean of (estimate − truth).
    pub mean_error: f64,
    pub empirical_std: f64,
    pub analytic_std: f64,
}

impl ParameterStats {
    /// `(empirical − analytic) / analytic`.
    pub fn relative_gap(&self) -> f64 {
        (self.empirical_std - self.analytic_std) / self.analytic_std
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStatistics {
    /// In `(Δθ_1 … Δθ_n, Δl_1 … Δl_n)` order.
    pub parameters: Vec<ParameterStats>,
    pub trials: usize,
    /// Trials dropped because identification did not converge.
    pub excluded: usize,
    pub exclusion_alarm: bool,
    /// Experiment count of the plan.
    pub points: usize,
}

impl TrialStatistics {
    pub fn empirical_stds(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.empirical_std).collect()
    }

    pub fn analytic_stds(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.analytic_std).collect()
    }
}

fn check_dims(
    model: &ManipulatorModel,
    dev: &ParameterDeviation,
    plan: &CalibrationPlan,
) -> Result<()> {
    check_dim("deviation length", model.links(), dev.links())?;
    check_dim("plan link count", model.links(), plan.links())
}

fn simulate_with(
    model: &ManipulatorModel,
    true_dev: &ParameterDeviation,
    plan: &CalibrationPlan,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MeasurementSet> {
    let positions = plan
        .configs()
        .iter()
        .map(|c| {
            let mut p = forward_kinematics(model, c, true_dev)?;
            if sigma > 0.0 {
                let ex: f64 = StandardNormal.sample(rng);
                let ey: f64 = StandardNormal.sample(rng);
                p.x += sigma * ex;
                p.y += sigma * ey;
            }
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasurementSet::new(positions))
}

/// Forward kinematics at `true_dev` plus iid N(0, σ²) noise on x and y.
/// Uses the same stream as trial 0.
pub fn simulate_measurements(
    model: &ManipulatorModel,
    true_dev: &ParameterDeviation,
    plan: &CalibrationPlan,
    noise: &NoiseSpec,
) -> Result<MeasurementSet> {
    check_dims(model, true_dev, plan)?;
    simulate_with(model, true_dev, plan, noise.sigma, &mut noise.trial_rng(0))
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0_f64, 0.0_f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn parameter_names(n: usize) -> impl Iterator<Item = (String, ParameterKind)> {
    (1..=n)
        .map(|i| (format!("dtheta_{i}"), ParameterKind::Angle))
        .chain((1..=n).map(|i| (format!("dl_{i}"), ParameterKind::Length)))
}

/// Repeated simulate-and-identify with per-parameter error statistics.
pub fn run_trials(
    model: &ManipulatorModel,
    true_dev: &ParameterDeviation,
    plan: &CalibrationPlan,
    noise: &NoiseSpec,
    trials: usize,
) -> Result<TrialStatistics> {
    run_trials_with(
        model,
        true_dev,
        plan,
        noise,
        trials,
        &IdentifyOptions::default(),
    )
}

pub fn run_trials_with(
    model: &ManipulatorModel,
    true_dev: &ParameterDeviation,
    plan: &CalibrationPlan,
    noise: &NoiseSpec,
    trials: usize,
    opts: &IdentifyOptions,
) -> Result<TrialStatistics> {
    check_dims(model, true_dev, plan)?;
    if trials == 0 {
        return Err(CalibError::InvalidInput(
            "trial count must be at least 1".into(),
        ));
    }
    let ja = stacked_jacobian(model, &ParameterDeviation::zero(model.links()), plan)?;
    if ja.nrows() < ja.ncols() {
        return Err(CalibError::RankDeficient { ratio: 0.0 });
    }
    let sv = ja.singular_values();
    let ratio = sv.min() / sv.max();
    if ratio.is_nan() || ratio < RANK_TOLERANCE {
        return Err(CalibError::RankDeficient { ratio });
    }
    let analytic = covariance(model, plan, noise.sigma)?.stddevs();
    let truth = true_dev.to_vector();

    let outcomes = (0..trials as u64)
        .into_par_iter()
        .map(|t| -> Result<Option<DVector<f64>>> {
            let mut rng = noise.trial_rng(t);
            let meas = simulate_with(model, true_dev, plan, noise.sigma, &mut rng)?;
            let res = identify(model, plan, &meas, opts)?;
            Ok(res.converged.then(|| res.deviation.to_vector() - &truth))
        })
        .collect::<Result<Vec<_>>>()?;

    let errors: Vec<&DVector<f64>> = outcomes.iter().flatten().collect();
    let kept = errors.len();
    let excluded = trials - kept;
    let exclusion_alarm = excluded as f64 > EXCLUSION_ALARM_FRACTION * trials as f64;
    if exclusion_alarm {
        log::warn!("{excluded} of {trials} trials did not converge and were excluded");
    }

    let parameters = parameter_names(model.links())
        .enumerate()
        .map(|(k, (name, kind))| {
            let (mean, std) = if kept == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let mean = compensated_sum(errors.iter().map(|e| e[k])) / kept as f64;
                let std = if kept > 1 {
                    let ss = compensated_sum(errors.iter().map(|e| (e[k] - mean).powi(2)));
                    (ss / (kept - 1) as f64).sqrt()
                } else {
                    0.0
                };
                (mean, std)
            };
            ParameterStats {
                name,
                kind,
                truth: truth[k],
                mean_error: mean,
                empirical_std: std,
                analytic_std: analytic[k],
            }
        })
        .collect();

    Ok(TrialStatistics {
        parameters,
        trials,
        excluded,
        exclusion_alarm,
        points: plan.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanEntry {
    /// Position of the plan in the input list.
    pub index: usize,
    pub score: PlanScore,
    pub stats: TrialStatistics,
    /// Mean over parameters of empirical stddev divided by the optimal-plan
    /// stddev for the same number of points; 1 is the best attainable.
    pub inefficiency: f64,
}

/// Per-plan statistics ranked best first by [`PlanEntry::inefficiency`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlanComparison {
    pub entries: Vec<PlanEntry>,
}

impl PlanComparison {
    pub fn by_input_order(&self) -> Vec<&PlanEntry> {
        let mut v: Vec<&PlanEntry> = self.entries.iter().collect();
        v.sort_by_key(|e| e.index);
        v
    }
}

/// Runs [`run_trials`] for every plan with the same noise seed and ranks them.
pub fn compare_plans(
    model: &ManipulatorModel,
    true_dev: &ParameterDeviation,
    plans: &[CalibrationPlan],
    noise: &NoiseSpec,
    trials: usize,
) -> Result<PlanComparison> {
    let mut entries = plans
        .iter()
        .enumerate()
        .map(|(index, plan)| {
            let stats = run_trials(model, true_dev, plan, noise, trials)?;
            let score = score_plan(model, plan)?;
            let bound = analytic_optimal_stddev(model, plan.len(), 1.0)?.stddevs();
            let ratios: Vec<f64> = stats
                .parameters
                .iter()
                .zip(&bound)
                .map(|(p, b)| p.empirical_std / (b * noise.sigma))
                .collect();
            let inefficiency = ratios.iter().sum::<f64>() / ratios.len() as f64;
            Ok(PlanEntry {
                index,
                score,
                stats,
                inefficiency,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| {
        a.inefficiency
            .total_cmp(&b.inefficiency)
            .then(a.index.cmp(&b.index))
    });
    Ok(PlanComparison { entries })
}

/// Monte Carlo statistics on generated optimal plans for each point count.
pub fn sweep_points(
    model: &ManipulatorModel,
    true_dev: &ParameterDeviation,
    points: &[usize],
    plan_opts: &PlanOptions,
    noise: &NoiseSpec,
    trials: usize,
) -> Result<Vec<TrialStatistics>> {
    points
        .iter()
        .map(|&m| {
            let plan = generate_optimal_plan(model, m, plan_opts)?;
            run_trials(model, true_dev, &plan, noise, trials)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::random_plan;

    fn two_link() -> (ManipulatorModel, ParameterDeviation) {
        let model = ManipulatorModel::new(vec![260.0, 180.0]).unwrap();
        let dev = ParameterDeviation::from_joint_offsets(
            vec![1.5, -0.6],
            &[0.5_f64.to_radians(), -0.5_f64.to_radians()],
        )
        .unwrap();
        (model, dev)
    }

    #[test]
    fn noiseless_measurements_are_exact() {
        let (model, dev) = two_link();
        let plan = generate_optimal_plan(&model, 3, &PlanOptions::default()).unwrap();
        let meas =
            simulate_measurements(&model, &dev, &plan, &NoiseSpec::new(0.0, 5).unwrap()).unwrap();
        for (c, p) in plan.configs().iter().zip(&meas.positions) {
            assert_eq!(*p, forward_kinematics(&model, c, &dev).unwrap());
        }
    }

    #[test]
    fn seeded_measurements_are_reproducible() {
        let (model, dev) = two_link();
        let plan = generate_optimal_plan(&model, 7, &PlanOptions::default()).unwrap();
        let noise = NoiseSpec::new(0.1, 42).unwrap();
        let a = simulate_measurements(&model, &dev, &plan, &noise).unwrap();
        let b = simulate_measurements(&model, &dev, &plan, &noise).unwrap();
        assert_eq!(a, b);
        let c =
            simulate_measurements(&model, &dev, &plan, &NoiseSpec::new(0.1, 43).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_generator_has_requested_stddev() {
        let (model, dev) = two_link();
        let plan = generate_optimal_plan(&model, 1000, &PlanOptions::default()).unwrap();
        let mut errs = Vec::new();
        for t in 0..50 {
            let mut rng = NoiseSpec::new(0.1, 9).unwrap().trial_rng(t);
            let meas = simulate_with(&model, &dev, &plan, 0.1, &mut rng).unwrap();
            for (c, p) in plan.configs().iter().zip(&meas.positions) {
                let f = forward_kinematics(&model, c, &dev).unwrap();
                errs.push(p.x - f.x);
                errs.push(p.y - f.y);
            }
        }
        assert_eq!(errs.len(), 100_000);
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let sd =
            (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (errs.len() - 1) as f64).sqrt();
        assert!((0.099..=0.101).contains(&sd), "sd = {sd}");
    }

    #[test]
    fn zero_noise_trials_have_no_error() {
        let (model, dev) = two_link();
        let plan = generate_optimal_plan(&model, 3, &PlanOptions::default()).unwrap();
        let stats = run_trials(&model, &dev, &plan, &NoiseSpec::new(0.0, 1).unwrap(), 20).unwrap();
        assert_eq!(stats.excluded, 0);
        for p in &stats.parameters {
            assert!(p.mean_error.abs() < 1e-9 && p.empirical_std < 1e-9);
        }
        let one = run_trials(&model, &dev, &plan, &NoiseSpec::new(0.0, 1).unwrap(), 1).unwrap();
        assert_eq!(one.trials, 1);
        assert!(one.parameters.iter().all(|p| p.empirical_std == 0.0));
    }

    #[test]
    fn unidentifiable_plan_is_rejected() {
        let (model, dev) = two_link();
        let plan = CalibrationPlan::from_degrees(&[vec![0.0, 30.0]]).unwrap();
        assert!(matches!(
            run_trials(&model, &dev, &plan, &NoiseSpec::new(0.1, 1).unwrap(), 10),
            Err(CalibError::RankDeficient { .. })
        ));
        assert!(run_trials(&model, &dev, &plan, &NoiseSpec::new(0.1, 1).unwrap(), 0).is_err());
    }

    #[test]
    fn two_link_three_points_matches_published_stddevs() {
        let (model, dev) = two_link();
        let plan = generate_optimal_plan(&model, 3, &PlanOptions::default()).unwrap();
        let stats = run_trials(
            &model,
            &dev,
            &plan,
            &NoiseSpec::new(0.1, 2024).unwrap(),
            10_000,
        )
        .unwrap();
        assert_eq!(stats.excluded, 0);
        let dl1 = &stats.parameters[2];
        let dth1 = &stats.parameters[0];
        assert!((dl1.empirical_std - 0.058).abs() <= 0.05 * 0.058);
        assert!((dth1.empirical_std.to_degrees() - 0.013).abs() <= 0.05 * 0.013);
        for p in &stats.parameters {
            assert!(
                p.relative_gap().abs() < 0.05,
                "{}: gap {}",
                p.name,
                p.relative_gap()
            );
            // unbiased within three standard errors
            assert!(p.mean_error.abs() < 3.0 * p.analytic_std / (stats.trials as f64).sqrt());
        }
    }

    #[test]
    fn statistics_independent_of_thread_count() {
        let (model, dev) = two_link();
        let plan = generate_optimal_plan(&model, 5, &PlanOptions::default()).unwrap();
        let noise = NoiseSpec::new(0.1, 77).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_trials(&model, &dev, &plan, &noise, 500).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn comparison_of_identical_plans() {
        let (model, dev) = two_link();
        let plan = generate_optimal_plan(&model, 4, &PlanOptions::default()).unwrap();
        let noise = NoiseSpec::new(0.1, 3).unwrap();
        let cmp = compare_plans(&model, &dev, &[plan.clone(), plan.clone()], &noise, 200).unwrap();
        assert_eq!(cmp.entries[0].stats, cmp.entries[1].stats);
        let single = compare_plans(&model, &dev, std::slice::from_ref(&plan), &noise, 200).unwrap();
        assert_eq!(
            single.entries[0].stats,
            run_trials(&model, &dev, &plan, &noise, 200).unwrap()
        );
    }

    #[test]
    fn optimal_plan_ranks_first() {
        let (model, dev) = two_link();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut plans = vec![generate_optimal_plan(&model, 6, &PlanOptions::default()).unwrap()];
        for _ in 0..5 {
            plans.push(random_plan(2, 6, &mut rng).unwrap());
        }
        let cmp =
            compare_plans(&model, &dev, &plans, &NoiseSpec::new(0.1, 4).unwrap(), 1000).unwrap();
        assert_eq!(cmp.entries[0].index, 0);
        assert_eq!(cmp.by_input_order()[0].index, 0);
    }

    #[test]
    fn compensated_sum_is_accurate() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v.into_iter()), 2.0);
    }
}
