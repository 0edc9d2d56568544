//! Calibration of planar n-link manipulators.
//!
//! - [`kinematics`]: forward model and Jacobian with respect to length and
//!   cumulative angle deviations.
//! - [`identification`]: iterative linearized least-squares identification.
//! - [`accuracy`]: information matrix blocks and parameter covariance.
//! - [`design`]: D*-optimal plan criteria, a closed-form plan generator and a
//!   numeric fallback for joint-limited arms.
//! - [`montecarlo`]: simulation harness comparing empirical and analytic
//!   identification accuracy.
//! - [`cli`]: the `design`, `evaluate`, `identify` and `simulate` workflows
//!   behind the `planar-calib` binary, with their CSV/JSON file formats.

pub mod accuracy;
pub mod cli;
pub mod design;
pub mod error;
pub mod identification;
pub mod io;
pub mod kinematics;
pub mod montecarlo;

pub use accuracy::{
    analytic_optimal_stddev, covariance, covariance_at, information_matrix, information_matrix_at,
    AccuracyReport, InformationBlocks,
};
pub use design::{
    condition_residuals, generate_optimal_plan, optimize_plan_numeric, random_plan, score_plan,
    ConditionSum, JointLimits, NumericOptions, NumericPlan, PlanOptions, PlanScore, Q1Policy,
};
pub use error::{CalibError, Result};
pub use identification::{
    identify, residual_vector, solve_linearized, CalibrationPlan, IdentificationResult,
    IdentifyOptions, MeasurementSet,
};
pub use kinematics::{
    apply_deviation, cumulative_angles, forward_kinematics, jacobian, JointConfiguration,
    ManipulatorModel, ParameterDeviation, PlanarPosition,
};
pub use montecarlo::{
    compare_plans, run_trials, simulate_measurements, sweep_points, NoiseSpec, PlanComparison,
    TrialStatistics,
};
