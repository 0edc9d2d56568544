//! Iterative linearized least-squares identification of parameter deviations.
//!
//! Each iteration stacks the per-configuration Jacobians into `J_a` (2m×2n),
//! solves `J_a·ΔΠ ≈ ΔP_a` in the least-squares sense through an SVD of `J_a`,
//! and folds the step into the running estimate. Jacobians are re-evaluated
//! at the corrected parameters on every pass.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, CalibError, Result};
use crate::kinematics::{
    apply_deviation, forward_kinematics, jacobian, JointConfiguration, ManipulatorModel,
    ParameterDeviation, PlanarPosition,
};

/// Relative singular value below which `J_a` is treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// Ordered joint configurations used for the calibration experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPlan {
    configs: Vec<JointConfiguration>,
}

impl CalibrationPlan {
    pub fn new(configs: Vec<JointConfiguration>) -> Result<Self> {
        let first = configs.first().ok_or_else(|| {
            CalibError::InvalidInput("a plan needs at least one configuration".into())
        })?;
        let n = first.links();
        if n == 0 {
            return Err(CalibError::InvalidInput(
                "configurations must not be empty".into(),
            ));
        }
        for c in &configs {
            check_dim("plan configuration length", n, c.links())?;
        }
        Ok(Self { configs })
    }

    /// Plan from rows of joint angles in degrees.
    pub fn from_degrees(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(
            rows.iter()
                .map(|r| JointConfiguration::from_degrees(r))
                .collect::<Result<_>>()?,
        )
    }

    pub fn configs(&self) -> &[JointConfiguration] {
        &self.configs
    }

    /// Experiment count `m`.
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn links(&self) -> usize {
        self.configs[0].links()
    }

    /// Necessary counting condition: 2m equations for 2n unknowns.
    pub fn has_enough_points(&self) -> bool {
        self.len() >= self.links()
    }

    pub fn to_degrees(&self) -> Vec<Vec<f64>> {
        self.configs
            .iter()
            .map(JointConfiguration::to_degrees)
            .collect()
    }
}

/// Measured end-effector positions, index-aligned with a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub positions: Vec<PlanarPosition>,
}

impl MeasurementSet {
    pub fn new(positions: Vec<PlanarPosition>) -> Self {
        Self { positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentifyOptions {
    /// Threshold on the Euclidean norm of a correction step (mm and rad mixed).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub deviation: ParameterDeviation,
    /// Number of linearized solves performed.
    pub iterations: usize,
    /// Norm of the residual vector at `deviation`, mm.
    pub final_residual_norm: f64,
    pub converged: bool,
    /// Norm of the last correction step.
    pub final_step_norm: f64,
    /// Residual norm before the first solve and after every correction.
    pub residual_history: Vec<f64>,
}

fn check_inputs(
    model: &ManipulatorModel,
    plan: &CalibrationPlan,
    measurements: &MeasurementSet,
) -> Result<()> {
    check_dim("plan link count", model.links(), plan.links())?;
    check_dim("measurement count", plan.len(), measurements.len())
}

/// Stacked `(x_i − f_x(Q_i, ΔΠ), y_i − f_y(Q_i, ΔΠ))` over all experiments.
pub fn residual_vector(
    model: &ManipulatorModel,
    dev: &ParameterDeviation,
    plan: &CalibrationPlan,
    measurements: &MeasurementSet,
) -> Result<DVector<f64>> {
    check_inputs(model, plan, measurements)?;
    let mut r = DVector::zeros(2 * plan.len());
    for (i, (c, p)) in plan.configs.iter().zip(&measurements.positions).enumerate() {
        let f = forward_kinematics(model, c, dev)?;
        r[2 * i] = p.x - f.x;
        r[2 * i + 1] = p.y - f.y;
    }
    Ok(r)
}

/// Stacked identification Jacobian `J_a` at the given deviation.
pub fn stacked_jacobian(
    model: &ManipulatorModel,
    dev: &ParameterDeviation,
    plan: &CalibrationPlan,
) -> Result<DMatrix<f64>> {
    check_dim("plan link count", model.links(), plan.links())?;
    let cols = model.parameter_count();
    let mut ja = DMatrix::zeros(2 * plan.len(), cols);
    for (i, c) in plan.configs.iter().enumerate() {
        let j = jacobian(model, c, dev)?;
        ja.view_mut((2 * i, 0), (2, cols)).copy_from(&j);
    }
    Ok(ja)
}

/// One least-squares correction step at `dev`.
pub fn solve_linearized(
    model: &ManipulatorModel,
    dev: &ParameterDeviation,
    plan: &CalibrationPlan,
    measurements: &MeasurementSet,
) -> Result<ParameterDeviation> {
    let residual = residual_vector(model, dev, plan, measurements)?;
    let ja = stacked_jacobian(model, dev, plan)?;
    if ja.nrows() < ja.ncols() {
        return Err(CalibError::RankDeficient { ratio: 0.0 });
    }
    let svd = ja.svd(true, true);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if ratio < RANK_TOLERANCE {
        return Err(CalibError::RankDeficient { ratio });
    }
    let step = svd
        .solve(&residual, 0.0)
        .map_err(|e| CalibError::InvalidInput(e.to_string()))?;
    ParameterDeviation::from_vector(&step)
}

/// Gauss-Newton identification starting from the nominal model.
pub fn identify(
    model: &ManipulatorModel,
    plan: &CalibrationPlan,
    measurements: &MeasurementSet,
    opts: &IdentifyOptions,
) -> Result<IdentificationResult> {
    check_inputs(model, plan, measurements)?;
    let mut dev = ParameterDeviation::zero(model.links());
    let mut history = vec![residual_vector(model, &dev, plan, measurements)?.norm()];
    let mut iterations = 0;
    let mut step_norm = f64::INFINITY;
    let mut converged = false;

    while iterations < opts.max_iter {
        let step = solve_linearized(model, &dev, plan, measurements)?;
        iterations += 1;
        step_norm = step.to_vector().norm();
        if !step_norm.is_finite() {
            break;
        }
        dev = apply_deviation(&dev, &step)?;
        history.push(residual_vector(model, &dev, plan, measurements)?.norm());
        if step_norm < opts.tol {
            converged = true;
            break;
        }
    }

    Ok(IdentificationResult {
        deviation: dev,
        iterations,
        final_residual_norm: *history.last().unwrap_or(&0.0),
        converged,
        final_step_norm: step_norm,
        residual_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plan_deg(rows: &[&[f64]]) -> CalibrationPlan {
        CalibrationPlan::from_degrees(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn measure(
        model: &ManipulatorModel,
        plan: &CalibrationPlan,
        dev: &ParameterDeviation,
    ) -> MeasurementSet {
        MeasurementSet::new(
            plan.configs()
                .iter()
                .map(|c| forward_kinematics(model, c, dev).unwrap())
                .collect(),
        )
    }

    fn four_link() -> (ManipulatorModel, ParameterDeviation) {
        let model = ManipulatorModel::new(vec![260.0, 180.0, 120.0, 100.0]).unwrap();
        let dq: Vec<f64> = [0.5, -0.5, 0.7, -0.3]
            .iter()
            .map(|d: &f64| d.to_radians())
            .collect();
        let dev = ParameterDeviation::from_joint_offsets(vec![1.5, -0.6, -0.4, 0.7], &dq).unwrap();
        (model, dev)
    }

    fn objective(
        model: &ManipulatorModel,
        dev: &ParameterDeviation,
        plan: &CalibrationPlan,
        meas: &MeasurementSet,
    ) -> f64 {
        // F = Σ (f_x − x)² + (f_y − y)², evaluated term by term
        plan.configs()
            .iter()
            .zip(&meas.positions)
            .map(|(c, p)| {
                let f = forward_kinematics(model, c, dev).unwrap();
                (f.x - p.x).powi(2) + (f.y - p.y).powi(2)
            })
            .sum()
    }

    #[test]
    fn plan_validation() {
        assert!(CalibrationPlan::new(vec![]).is_err());
        assert!(CalibrationPlan::from_degrees(&[vec![0.0, 1.0], vec![0.0]]).is_err());
        let p = plan_deg(&[&[0.0, 0.0], &[10.0, 20.0]]);
        assert_eq!((p.len(), p.links()), (2, 2));
        assert!(p.has_enough_points());
    }

    #[test]
    fn residual_zero_at_truth() {
        let (model, dev) = four_link();
        let plan = plan_deg(&[
            &[0.0, 10.0, 20.0, 30.0],
            &[40.0, -50.0, 60.0, 70.0],
            &[1.0, 2.0, 3.0, 4.0],
        ]);
        let meas = measure(&model, &plan, &dev);
        let r = residual_vector(&model, &dev, &plan, &meas).unwrap();
        assert_eq!(r.len(), 6);
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn residual_norm_matches_objective() {
        let (model, dev) = four_link();
        let plan = plan_deg(&[
            &[0.0, 10.0, 20.0, 30.0],
            &[40.0, -50.0, 60.0, 70.0],
            &[1.0, 2.0, 3.0, 4.0],
        ]);
        let meas = measure(&model, &plan, &dev);
        let zero = ParameterDeviation::zero(4);
        let r = residual_vector(&model, &zero, &plan, &meas).unwrap();
        let f = objective(&model, &zero, &plan, &meas);
        assert!(r.norm() > 0.1);
        assert!((r.norm() - f.sqrt()).abs() < 1e-12 * f.sqrt());
    }

    #[test]
    fn residual_offset_example() {
        let model = ManipulatorModel::new(vec![260.0, 180.0]).unwrap();
        let plan = plan_deg(&[&[30.0, 45.0]]);
        let zero = ParameterDeviation::zero(2);
        let mut meas = measure(&model, &plan, &zero);
        meas.positions[0].x += 1.0;
        let r = residual_vector(&model, &zero, &plan, &meas).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-12 && r[1].abs() < 1e-12);
    }

    #[test]
    fn mismatched_measurements_rejected() {
        let model = ManipulatorModel::new(vec![260.0, 180.0]).unwrap();
        let plan = plan_deg(&[&[0.0, 0.0], &[0.0, 90.0]]);
        let meas = MeasurementSet::new(vec![PlanarPosition::default()]);
        assert!(matches!(
            identify(&model, &plan, &meas, &IdentifyOptions::default()),
            Err(CalibError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn one_step_recovers_small_deviation() {
        let model = ManipulatorModel::new(vec![260.0, 180.0, 120.0]).unwrap();
        let truth =
            ParameterDeviation::new(vec![0.01, -0.006, 0.004], vec![1e-5, -7e-6, 4e-6]).unwrap();
        let plan = plan_deg(&[
            &[0.0, 0.0, 0.0],
            &[30.0, 120.0, 120.0],
            &[60.0, 240.0, 240.0],
            &[90.0, 45.0, -100.0],
        ]);
        let meas = measure(&model, &plan, &truth);
        let step = solve_linearized(&model, &ParameterDeviation::zero(3), &plan, &meas).unwrap();
        let err = (step.to_vector() - truth.to_vector()).norm() / truth.to_vector().norm();
        assert!(err <= 1e-4, "relative error {err}");
    }

    #[test]
    fn zero_rhs_gives_zero_step() {
        let model = ManipulatorModel::new(vec![260.0, 180.0]).unwrap();
        let plan = plan_deg(&[&[0.0, 0.0], &[0.0, 120.0], &[0.0, 240.0]]);
        let zero = ParameterDeviation::zero(2);
        let meas = measure(&model, &plan, &zero);
        let step = solve_linearized(&model, &zero, &plan, &meas).unwrap();
        assert_eq!(step.max_abs(), 0.0);
    }

    #[test]
    fn too_few_points_is_rank_deficient() {
        for n in 2..=5 {
            let model = ManipulatorModel::new(vec![100.0; n]).unwrap();
            let rows: Vec<Vec<f64>> = (0..n - 1)
                .map(|i| (0..n).map(|k| 17.0 * (i + k) as f64).collect())
                .collect();
            let plan = CalibrationPlan::from_degrees(&rows).unwrap();
            let zero = ParameterDeviation::zero(n);
            let meas = measure(&model, &plan, &zero);
            assert!(matches!(
                solve_linearized(&model, &zero, &plan, &meas),
                Err(CalibError::RankDeficient { .. })
            ));
        }
    }

    #[test]
    fn identical_configurations_are_rank_deficient() {
        let model = ManipulatorModel::new(vec![260.0, 180.0]).unwrap();
        let plan = plan_deg(&[&[10.0, 50.0], &[10.0, 50.0], &[10.0, 50.0], &[10.0, 50.0]]);
        let zero = ParameterDeviation::zero(2);
        let meas = measure(&model, &plan, &zero);
        assert!(matches!(
            identify(&model, &plan, &meas, &IdentifyOptions::default()),
            Err(CalibError::RankDeficient { .. })
        ));
    }

    #[test]
    fn recovers_four_link_deviations_exactly() {
        let (model, truth) = four_link();
        let plan = plan_deg(&[
            &[0.0, 10.0, -40.0, 75.0],
            &[72.0, 95.0, 150.0, -120.0],
            &[144.0, -60.0, 20.0, 35.0],
            &[216.0, 170.0, -110.0, 5.0],
            &[288.0, 30.0, 80.0, -150.0],
        ]);
        let meas = measure(&model, &plan, &truth);
        let res = identify(&model, &plan, &meas, &IdentifyOptions::default()).unwrap();
        assert!(res.converged);
        for (a, b) in res.deviation.dl.iter().zip(&truth.dl) {
            assert!((a - b).abs() < 1e-9);
        }
        let dq = res.deviation.joint_offsets();
        for (a, b) in dq.iter().zip([0.5, -0.5, 0.7, -0.3]) {
            assert!((a.to_degrees() - b).abs() < 1e-9);
        }
    }

    #[test]
    fn nominal_data_converges_in_one_iteration() {
        let model = ManipulatorModel::new(vec![260.0, 180.0]).unwrap();
        let plan = plan_deg(&[&[0.0, 0.0], &[0.0, 120.0], &[0.0, 240.0]]);
        let zero = ParameterDeviation::zero(2);
        let meas = measure(&model, &plan, &zero);
        let res = identify(&model, &plan, &meas, &IdentifyOptions::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        assert_eq!(res.deviation, zero);
    }

    #[test]
    fn two_link_optimal_plan_iteration_bound() {
        let model = ManipulatorModel::new(vec![260.0, 180.0]).unwrap();
        let truth = ParameterDeviation::from_joint_offsets(
            vec![1.5, -0.6],
            &[0.5_f64.to_radians(), -0.5_f64.to_radians()],
        )
        .unwrap();
        let plan = plan_deg(&[&[0.0, 0.0], &[120.0, 120.0], &[240.0, 240.0]]);
        let meas = measure(&model, &plan, &truth);
        let res = identify(&model, &plan, &meas, &IdentifyOptions::default()).unwrap();
        assert!(res.converged);
        // 4 at the time of writing
        assert!(res.iterations <= 6, "took {} iterations", res.iterations);
        assert!((res.deviation.to_vector() - truth.to_vector()).amax() < 1e-9);
    }

    #[test]
    fn max_iter_reports_non_convergence() {
        let (model, truth) = four_link();
        let plan = plan_deg(&[
            &[0.0, 10.0, -40.0, 75.0],
            &[72.0, 95.0, 150.0, -120.0],
            &[144.0, -60.0, 20.0, 35.0],
            &[216.0, 170.0, -110.0, 5.0],
        ]);
        let meas = measure(&model, &plan, &truth);
        let opts = IdentifyOptions {
            tol: 1e-10,
            max_iter: 1,
        };
        let res = identify(&model, &plan, &meas, &opts).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 1);
    }

    fn random_instance() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
        (1usize..=4, 0usize..=6).prop_flat_map(|(n, extra)| {
            let m = n + 1 + extra;
            (
                prop::collection::vec(50.0..300.0f64, n),
                prop::collection::vec(prop::collection::vec(-180.0..180.0f64, n), m),
                prop::collection::vec(-5.0..5.0f64, n),
                prop::collection::vec(-2.0..2.0f64, n),
            )
        })
    }

    fn well_posed(model: &ManipulatorModel, plan: &CalibrationPlan) -> bool {
        let ja = stacked_jacobian(model, &ParameterDeviation::zero(model.links()), plan).unwrap();
        let sv = ja.singular_values();
        sv.min() / sv.max() > 1e-4
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn noiseless_identification_is_exact((l, rows, dl, dt_deg) in random_instance()) {
            let model = ManipulatorModel::new(l).unwrap();
            let plan = CalibrationPlan::from_degrees(&rows).unwrap();
            prop_assume!(well_posed(&model, &plan));
            let truth = ParameterDeviation::new(dl, dt_deg.iter().map(|d| d.to_radians()).collect()).unwrap();
            let meas = measure(&model, &plan, &truth);
            let res = identify(&model, &plan, &meas, &IdentifyOptions::default()).unwrap();
            prop_assert!(res.converged);
            prop_assert!((res.deviation.to_vector() - truth.to_vector()).amax() < 1e-9);

            // residual never grows between iterations
            for w in res.residual_history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12);
            }

            // gradient of the objective vanishes at the solution
            let x = res.deviation.to_vector();
            let h = 1e-7;
            for k in 0..x.len() {
                let mut p = x.clone();
                let mut q = x.clone();
                p[k] += h;
                q[k] -= h;
                let fp = objective(&model, &ParameterDeviation::from_vector(&p).unwrap(), &plan, &meas);
                let fq = objective(&model, &ParameterDeviation::from_vector(&q).unwrap(), &plan, &meas);
                prop_assert!(((fp - fq) / (2.0 * h)).abs() < 1e-6);
            }
        }
    }
}
