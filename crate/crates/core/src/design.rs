//! D*-optimal calibration plans.
//!
//! A plan is optimal when every off-diagonal entry of `C` and `S` vanishes,
//! i.e. for every pair of links `j < k` the sums
//! `Σ_i cos(q_{j+1} + … + q_k)` and `Σ_i sin(q_{j+1} + … + q_k)` are zero.
//! The information matrix is then `diag(m·l_1², …, m·l_n², m, …, m)`.
//!
//! [`generate_optimal_plan`] builds such plans in closed form by spreading
//! joints 2..n over the m-th roots of unity. [`optimize_plan_numeric`] is the
//! fallback for joint-limited arms: it drives the condition sums towards zero
//! with a box-projected Levenberg-Marquardt iteration from several seeded
//! starting points.

use std::cmp::Ordering;
use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accuracy::information_matrix;
use crate::error::{check_dim, CalibError, Result};
use crate::identification::CalibrationPlan;
use crate::kinematics::{JointConfiguration, ManipulatorModel};

/// One pair of optimality conditions: the cos and sin sums over the joint
/// range `first_joint..=last_joint` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionSum {
    pub first_joint: usize,
    pub last_joint: usize,
    pub cos_sum: f64,
    pub sin_sum: f64,
}

impl ConditionSum {
    /// Joint range suffix: `2` for q_2 alone, `23` for q_2 + q_3.
    pub fn label(&self) -> String {
        let (a, b) = (self.first_joint, self.last_joint);
        match (a == b, a < 10 && b < 10) {
            (true, _) => a.to_string(),
            (false, true) => format!("{a}{b}"),
            (false, false) => format!("{a}_{b}"),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.cos_sum.abs().max(self.sin_sum.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanScore {
    /// `det(C/m)`.
    pub det_c: f64,
    /// `det(S/m)`.
    pub det_s: f64,
    /// Determinant of the information matrix scaled to unit diagonal.
    pub det_d: f64,
    /// Largest absolute condition sum.
    pub condition_residual: f64,
}

/// How the first joint, which enters no optimality condition, is placed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Q1Policy {
    /// `q_1 = 2π·i/m`, or evenly spread inside the joint range when limited.
    #[default]
    Uniform,
    /// Same angle in every configuration, rad.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanOptions {
    pub q1_policy: Q1Policy,
    /// Phase `φ_k` for joints 2..n, rad. Empty means all zero.
    pub phase_offsets: Vec<f64>,
}

/// Per-joint closed intervals, rad. `None` leaves a joint free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub limits: Vec<Option<(f64, f64)>>,
}

impl JointLimits {
    pub fn unbounded(links: usize) -> Self {
        Self {
            limits: vec![None; links],
        }
    }

    pub fn from_degrees(limits: &[Option<(f64, f64)>]) -> Self {
        Self {
            limits: limits
                .iter()
                .map(|l| l.map(|(a, b)| (a.to_radians(), b.to_radians())))
                .collect(),
        }
    }

    fn validate(&self, links: usize) -> Result<()> {
        check_dim("joint limit count", links, self.limits.len())?;
        for (i, lim) in self.limits.iter().enumerate() {
            if let Some((lo, hi)) = lim {
                if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                    return Err(CalibError::Infeasible(format!(
                        "joint {} has empty range [{lo}, {hi}]",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    fn clamp(&self, joint: usize, v: f64) -> f64 {
        match self.limits[joint] {
            Some((lo, hi)) => v.clamp(lo, hi),
            None => v,
        }
    }

    fn sample(&self, joint: usize, rng: &mut ChaCha8Rng) -> f64 {
        match self.limits[joint] {
            Some((lo, hi)) if hi > lo => rng.random_range(lo..=hi),
            Some((lo, _)) => lo,
            None => rng.random_range(-PI..PI),
        }
    }

    fn is_unbounded(&self) -> bool {
        self.limits.iter().all(Option::is_none)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericOptions {
    pub q1_policy: Q1Policy,
    /// Number of random starting points.
    pub starts: usize,
    pub max_iter: usize,
    /// Stop once the squared condition residual falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for NumericOptions {
    fn default() -> Self {
        Self {
            q1_policy: Q1Policy::Uniform,
            starts: 16,
            max_iter: 500,
            tol: 1e-24,
            seed: 0,
        }
    }
}

/// Best plan from the numeric search together with its score.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericPlan {
    pub plan: CalibrationPlan,
    pub score: PlanScore,
    /// Index of the start that produced the plan.
    pub start: usize,
}

/// Cos/sin sums for every link pair `j < k`, ordered by `j` then `k`.
pub fn condition_residuals(plan: &CalibrationPlan) -> Vec<ConditionSum> {
    let n = plan.links();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for j in 0..n {
        for k in (j + 1)..n {
            let (mut c, mut s) = (0.0, 0.0);
            for config in plan.configs() {
                let phi: f64 = config.q[j + 1..=k].iter().sum();
                let (sn, cs) = phi.sin_cos();
                c += cs;
                s += sn;
            }
            out.push(ConditionSum {
                first_joint: j + 2,
                last_joint: k + 1,
                cos_sum: c,
                sin_sum: s,
            });
        }
    }
    out
}

pub fn score_plan(model: &ManipulatorModel, plan: &CalibrationPlan) -> Result<PlanScore> {
    let blocks = information_matrix(model, plan)?;
    let m = blocks.m() as f64;
    let det_c = (blocks.c() / m).determinant();
    let det_s = (blocks.s() / m).determinant();
    let det_d = blocks.normalized().determinant();
    let condition_residual = condition_residuals(plan)
        .iter()
        .fold(0.0_f64, |acc, c| acc.max(c.max_abs()));
    Ok(PlanScore {
        det_c,
        det_s,
        det_d,
        condition_residual,
    })
}

fn q1_values(policy: Q1Policy, m: usize, limit: Option<(f64, f64)>) -> Vec<f64> {
    (0..m)
        .map(|i| match (policy, limit) {
            (Q1Policy::Fixed(v), Some((lo, hi))) => v.clamp(lo, hi),
            (Q1Policy::Fixed(v), None) => v,
            (Q1Policy::Uniform, Some((lo, hi))) => lo + (hi - lo) * (i as f64 + 0.5) / m as f64,
            (Q1Policy::Uniform, None) => TAU * i as f64 / m as f64,
        })
        .collect()
}

/// Closed-form optimal plan: `q_{k,i} = 2π·i/m + φ_k` for joints 2..n.
///
/// Every condition sum over joints `j+1..=k` then runs over the m-th roots of
/// unity raised to the power `k − j < m`, so it vanishes.
pub fn generate_optimal_plan(
    model: &ManipulatorModel,
    m: usize,
    opts: &PlanOptions,
) -> Result<CalibrationPlan> {
    let n = model.links();
    if m < n || m == 0 {
        return Err(CalibError::InsufficientPoints {
            points: m,
            links: n,
        });
    }
    if !opts.phase_offsets.is_empty() {
        check_dim(
            "phase offsets (joints 2..n)",
            n - 1,
            opts.phase_offsets.len(),
        )?;
    }
    let q1 = q1_values(opts.q1_policy, m, None);
    let configs = (0..m)
        .map(|i| {
            let base = TAU * i as f64 / m as f64;
            let q = std::iter::once(q1[i])
                .chain((1..n).map(|k| base + opts.phase_offsets.get(k - 1).copied().unwrap_or(0.0)))
                .collect();
            JointConfiguration::new(q)
        })
        .collect::<Result<Vec<_>>>()?;
    CalibrationPlan::new(configs)
}

/// Plan with every joint angle drawn uniformly from `[−π, π)`.
pub fn random_plan(links: usize, m: usize, rng: &mut impl Rng) -> Result<CalibrationPlan> {
    CalibrationPlan::new(
        (0..m)
            .map(|_| {
                JointConfiguration::new((0..links).map(|_| rng.random_range(-PI..PI)).collect())
            })
            .collect::<Result<Vec<_>>>()?,
    )
}

/// Residual vector (all cos sums then sin sums per pair) and its Jacobian
/// with respect to the free angles `q_{k,i}`, k = 2..n.
struct ConditionSystem {
    n: usize,
    m: usize,
}

impl ConditionSystem {
    fn vars(&self) -> usize {
        (self.n - 1) * self.m
    }

    fn pairs(&self) -> usize {
        self.n * (self.n - 1) / 2
    }

    // variable layout: x[(k - 1) * m + i] = q_{k,i} for joint k (0-based) >= 1
    fn evaluate(
        &self,
        x: &DVector<f64>,
        with_jacobian: bool,
    ) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let (n, m) = (self.n, self.m);
        let rows = 2 * self.pairs();
        let mut r = DVector::zeros(rows);
        let mut jac = with_jacobian.then(|| DMatrix::zeros(rows, self.vars()));
        let mut pair = 0;
        for j in 0..n {
            for k in (j + 1)..n {
                for i in 0..m {
                    let phi: f64 = (j + 1..=k).map(|p| x[(p - 1) * m + i]).sum();
                    let (sn, cs) = phi.sin_cos();
                    r[2 * pair] += cs;
                    r[2 * pair + 1] += sn;
                    if let Some(jac) = jac.as_mut() {
                        for p in (j + 1)..=k {
                            let col = (p - 1) * m + i;
                            jac[(2 * pair, col)] = -sn;
                            jac[(2 * pair + 1, col)] = cs;
                        }
                    }
                }
                pair += 1;
            }
        }
        (r, jac)
    }
}

fn project(x: &mut DVector<f64>, limits: &JointLimits, m: usize) {
    for (idx, v) in x.iter_mut().enumerate() {
        *v = limits.clamp(idx / m + 1, *v);
    }
}

fn local_search(
    sys: &ConditionSystem,
    limits: &JointLimits,
    mut x: DVector<f64>,
    opts: &NumericOptions,
) -> DVector<f64> {
    project(&mut x, limits, sys.m);
    let (mut r, _) = sys.evaluate(&x, false);
    let mut f = r.norm_squared();
    let mut lambda = 1e-3;
    for _ in 0..opts.max_iter {
        if f < opts.tol {
            break;
        }
        let (_, jac) = sys.evaluate(&x, true);
        let jac = jac.expect("jacobian requested");
        let mut improved = false;
        while lambda < 1e12 {
            let mut gram = &jac * jac.transpose();
            for d in 0..gram.nrows() {
                gram[(d, d)] += lambda;
            }
            let Some(chol) = gram.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = -(jac.transpose() * chol.solve(&r));
            let mut trial = &x + step;
            project(&mut trial, limits, sys.m);
            let (tr, _) = sys.evaluate(&trial, false);
            let tf = tr.norm_squared();
            if tf < f {
                x = trial;
                r = tr;
                f = tf;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    x
}

fn assemble_plan(x: &DVector<f64>, q1: &[f64], n: usize, m: usize) -> Result<CalibrationPlan> {
    CalibrationPlan::new(
        (0..m)
            .map(|i| {
                JointConfiguration::new(
                    std::iter::once(q1[i])
                        .chain((1..n).map(|k| x[(k - 1) * m + i]))
                        .collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?,
    )
}

/// Numerical plan search for joint-limited manipulators.
///
/// Starts are evaluated in parallel; the winner is the lowest condition
/// residual, then the highest `det_d`, then the lowest start index, so the
/// result depends only on the seed.
pub fn optimize_plan_numeric(
    model: &ManipulatorModel,
    m: usize,
    limits: &JointLimits,
    opts: &NumericOptions,
) -> Result<NumericPlan> {
    let n = model.links();
    if m < n || m == 0 {
        return Err(CalibError::InsufficientPoints {
            points: m,
            links: n,
        });
    }
    limits.validate(n)?;
    let q1 = q1_values(opts.q1_policy, m, limits.limits[0]);
    let sys = ConditionSystem { n, m };
    let starts = opts.starts.max(1);

    let candidates = (0..starts)
        .into_par_iter()
        .map(|start| -> Result<NumericPlan> {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(start as u64);
            let x0 = DVector::from_fn(sys.vars(), |idx, _| limits.sample(idx / m + 1, &mut rng));
            let x = if n > 1 {
                local_search(&sys, limits, x0, opts)
            } else {
                x0
            };
            let plan = assemble_plan(&x, &q1, n, m)?;
            let score = score_plan(model, &plan)?;
            Ok(NumericPlan { plan, score, start })
        })
        .collect::<Result<Vec<_>>>()?;

    let best = candidates
        .into_iter()
        .min_by(|a, b| {
            a.score
                .condition_residual
                .total_cmp(&b.score.condition_residual)
                .then_with(|| b.score.det_d.total_cmp(&a.score.det_d))
                .then_with(|| a.start.cmp(&b.start))
        })
        .expect("at least one start");
    if best.score.condition_residual > 1e-6 && limits.is_unbounded() {
        log::warn!(
            "numeric plan search stopped at residual {:.3e} without joint limits",
            best.score.condition_residual
        );
    }
    Ok(best)
}

/// Orders scores best-first: lower residual, then higher `det_d`.
pub fn compare_scores(a: &PlanScore, b: &PlanScore) -> Ordering {
    a.condition_residual
        .total_cmp(&b.condition_residual)
        .then_with(|| b.det_d.total_cmp(&a.det_d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(n: usize) -> ManipulatorModel {
        ManipulatorModel::new([260.0, 180.0, 120.0, 100.0, 80.0, 60.0][..n].to_vec()).unwrap()
    }

    fn plan_deg(rows: &[Vec<f64>]) -> CalibrationPlan {
        CalibrationPlan::from_degrees(rows).unwrap()
    }

    #[test]
    fn cube_roots_of_unity_satisfy_two_link_conditions() {
        let plan = plan_deg(&[vec![0.0, 0.0], vec![0.0, 120.0], vec![0.0, 240.0]]);
        let sums = condition_residuals(&plan);
        assert_eq!(sums.len(), 1);
        assert_eq!(sums[0].label(), "2");
        assert!(sums[0].max_abs() < 1e-12);
    }

    #[test]
    fn repeated_zero_angle_sums_to_m() {
        let plan = plan_deg(&vec![vec![15.0, 0.0]; 5]);
        let sums = condition_residuals(&plan);
        assert!((sums[0].cos_sum - 5.0).abs() < 1e-15);
        assert!(sums[0].sin_sum.abs() < 1e-15);
    }

    #[test]
    fn labels_follow_joint_ranges() {
        let plan = plan_deg(&[vec![0.0; 4]]);
        let labels: Vec<String> = condition_residuals(&plan)
            .iter()
            .map(ConditionSum::label)
            .collect();
        assert_eq!(labels, ["2", "23", "24", "3", "34", "4"]);
        assert!(condition_residuals(&plan_deg(&[vec![10.0]])).is_empty());
    }

    #[test]
    fn three_link_generated_plan_meets_conditions() {
        let plan = generate_optimal_plan(&model(3), 4, &PlanOptions::default()).unwrap();
        let sums = condition_residuals(&plan);
        assert_eq!(sums.len(), 3);
        assert!(sums.iter().all(|s| s.max_abs() < 1e-12));
    }

    #[test]
    fn four_link_four_points() {
        let plan = generate_optimal_plan(&model(4), 4, &PlanOptions::default()).unwrap();
        for (i, row) in plan.to_degrees().iter().enumerate() {
            for q in &row[1..] {
                assert!((q - 90.0 * i as f64).abs() < 1e-12);
            }
        }
        let sums = condition_residuals(&plan);
        assert_eq!(sums.len(), 6);
        assert!(sums.iter().all(|s| s.max_abs() < 1e-12));
    }

    #[test]
    fn two_link_three_points() {
        let plan = generate_optimal_plan(&model(2), 3, &PlanOptions::default()).unwrap();
        let q2: Vec<f64> = plan.to_degrees().iter().map(|r| r[1]).collect();
        for (a, b) in q2.iter().zip([0.0, 120.0, 240.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_points_rejected() {
        assert_eq!(
            generate_optimal_plan(&model(4), 3, &PlanOptions::default()),
            Err(CalibError::InsufficientPoints {
                points: 3,
                links: 4
            })
        );
        assert!(matches!(
            optimize_plan_numeric(
                &model(4),
                3,
                &JointLimits::unbounded(4),
                &NumericOptions::default()
            ),
            Err(CalibError::InsufficientPoints { .. })
        ));
    }

    #[test]
    fn phases_and_fixed_first_joint() {
        let opts = PlanOptions {
            q1_policy: Q1Policy::Fixed(0.25),
            phase_offsets: vec![0.3, -1.1, 2.0],
        };
        let plan = generate_optimal_plan(&model(4), 7, &opts).unwrap();
        assert!(plan.configs().iter().all(|c| c.q[0] == 0.25));
        let score = score_plan(&model(4), &plan).unwrap();
        assert!(score.condition_residual < 1e-12);
        let bad = PlanOptions {
            phase_offsets: vec![0.1],
            ..PlanOptions::default()
        };
        assert!(generate_optimal_plan(&model(4), 7, &bad).is_err());
    }

    #[test]
    fn generator_valid_over_grid() {
        for n in 2..=6 {
            for m in n..=40 {
                let plan = generate_optimal_plan(&model(n), m, &PlanOptions::default()).unwrap();
                let score = score_plan(&model(n), &plan).unwrap();
                assert!(score.condition_residual < 1e-9, "n={n} m={m}");
            }
        }
    }

    #[test]
    fn optimal_scores_and_diagonal_information() {
        for n in 2..=4 {
            let mdl = model(n);
            for m in n..=30 {
                let plan = generate_optimal_plan(&mdl, m, &PlanOptions::default()).unwrap();
                let s = score_plan(&mdl, &plan).unwrap();
                assert!((s.det_c - 1.0).abs() < 1e-9);
                assert!(s.det_s.abs() < 1e-9);
                assert!((s.det_d - 1.0).abs() < 1e-9);
                let info = information_matrix(&mdl, &plan).unwrap().assemble();
                for r in 0..2 * n {
                    for c in 0..2 * n {
                        let expected = match (r == c, r < n) {
                            (true, true) => m as f64 * mdl.link_lengths()[r].powi(2),
                            (true, false) => m as f64,
                            _ => 0.0,
                        };
                        assert!(
                            (info[(r, c)] - expected).abs() < 1e-9 * (m as f64) * 260.0 * 260.0
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn identical_configurations_have_zero_det_d() {
        let plan = plan_deg(&vec![vec![10.0, 40.0, -30.0]; 6]);
        let s = score_plan(&model(3), &plan).unwrap();
        assert!(s.det_d.abs() < 1e-12);
    }

    #[test]
    fn score_invariant_under_first_joint_rotation() {
        let rows: Vec<Vec<f64>> = (0..9)
            .map(|i| {
                vec![
                    i as f64 * 13.0,
                    i as f64 * 37.0 - 20.0,
                    50.0 - i as f64 * 71.0,
                    i as f64 * i as f64,
                ]
            })
            .collect();
        let a = score_plan(&model(4), &plan_deg(&rows)).unwrap();
        let shifted: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r[0] += 77.0;
                r
            })
            .collect();
        let b = score_plan(&model(4), &plan_deg(&shifted)).unwrap();
        assert!((a.det_c - b.det_c).abs() < 1e-12);
        assert!((a.det_s - b.det_s).abs() < 1e-12);
        assert!((a.det_d - b.det_d).abs() < 1e-12);
        assert!((a.condition_residual - b.condition_residual).abs() < 1e-12);
    }

    #[test]
    fn hadamard_bound_on_random_plans() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let rows: Vec<Vec<f64>> = (0..10)
                .map(|_| (0..4).map(|_| rng.random_range(-180.0..180.0)).collect())
                .collect();
            let s = score_plan(&model(4), &plan_deg(&rows)).unwrap();
            assert!(s.det_c.abs() <= 1.0 + 1e-12);
            assert!(s.det_d < 1.0 && s.det_d >= -1e-12);
        }
    }

    #[test]
    fn numeric_search_matches_closed_form_without_limits() {
        for n in 2..=4 {
            let mdl = model(n);
            let found = optimize_plan_numeric(
                &mdl,
                n + 2,
                &JointLimits::unbounded(n),
                &NumericOptions::default(),
            )
            .unwrap();
            assert!(
                found.score.condition_residual < 1e-6,
                "n={n}: {:?}",
                found.score
            );
            assert!((found.score.det_c - 1.0).abs() < 1e-6);
            assert!((found.score.det_d - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn numeric_search_with_tight_limits_is_best_effort() {
        let limits = JointLimits::from_degrees(&[None, Some((-10.0, 10.0))]);
        let found =
            optimize_plan_numeric(&model(2), 3, &limits, &NumericOptions::default()).unwrap();
        assert!(found.score.condition_residual >= 3.0 * 10f64.to_radians().cos() - 1e-9);
        for c in found.plan.configs() {
            assert!(c.q[1].abs() <= 10f64.to_radians() + 1e-15);
        }
    }

    #[test]
    fn numeric_search_is_seed_deterministic() {
        let limits = JointLimits::from_degrees(&[
            Some((-90.0, 90.0)),
            Some((-150.0, 150.0)),
            Some((-120.0, 120.0)),
        ]);
        let opts = NumericOptions {
            seed: 99,
            ..NumericOptions::default()
        };
        let a = optimize_plan_numeric(&model(3), 5, &limits, &opts).unwrap();
        let b = optimize_plan_numeric(&model(3), 5, &limits, &opts).unwrap();
        assert_eq!(a, b);
        for c in a.plan.configs() {
            assert!(c.q[0].abs() <= 90f64.to_radians() + 1e-15);
        }
    }

    #[test]
    fn empty_limit_range_is_infeasible() {
        let limits = JointLimits::from_degrees(&[None, Some((20.0, -20.0))]);
        assert!(matches!(
            optimize_plan_numeric(&model(2), 3, &limits, &NumericOptions::default()),
            Err(CalibError::Infeasible(_))
        ));
    }

    #[test]
    fn condition_jacobian_matches_finite_differences() {
        let sys = ConditionSystem { n: 4, m: 5 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DVector::from_fn(sys.vars(), |_, _| rng.random_range(-3.0..3.0));
        let (_, jac) = sys.evaluate(&x, true);
        let jac = jac.unwrap();
        let h = 1e-6;
        for col in 0..sys.vars() {
            let mut p = x.clone();
            let mut q = x.clone();
            p[col] += h;
            q[col] -= h;
            let fd = (sys.evaluate(&p, false).0 - sys.evaluate(&q, false).0) / (2.0 * h);
            assert!((fd - jac.column(col)).amax() < 1e-8);
        }
    }
}
