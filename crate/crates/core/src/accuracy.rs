//! Error propagation from measurement noise to identified parameters.
//!
//! The information matrix `Σ J_iᵀ J_i` of a plan has the block form
//!
//! ```text
//! ┌ L·C·L   L·S ┐      c_jk = Σ_i cos(θ_k − θ_j)
//! └ (L·S)ᵀ  C   ┘      s_jk = Σ_i sin(θ_k − θ_j)
//! ```
//!
//! with `L = diag(l_1 … l_n)`, and the parameter covariance under iid
//! measurement noise of stddev σ is `σ²·(Σ J_iᵀ J_i)⁻¹`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{check_dim, CalibError, Result};
use crate::identification::CalibrationPlan;
use crate::kinematics::{cumulative_angles, ManipulatorModel, ParameterDeviation};

/// Relative eigenvalue below which the information matrix counts as singular.
pub const CONDITION_TOLERANCE: f64 = 1e-10;

/// `L`, `C` and `S` blocks of the information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationBlocks {
    lengths: Vec<f64>,
    c: DMatrix<f64>,
    s: DMatrix<f64>,
    m: usize,
}

impl InformationBlocks {
    /// Diagonal of `L`, mm.
    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// Experiment count.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn links(&self) -> usize {
        self.lengths.len()
    }

    /// C symmetric with diagonal m, S antisymmetric with zero diagonal, and
    /// every entry bounded by m.
    pub fn satisfies_invariants(&self) -> bool {
        let n = self.links();
        let m = self.m as f64;
        let bound = m * (1.0 + 1e-12);
        (0..n).all(|j| {
            self.c[(j, j)] == m
                && self.s[(j, j)] == 0.0
                && (0..n).all(|k| {
                    self.c[(j, k)] == self.c[(k, j)]
                        && self.s[(j, k)] == -self.s[(k, j)]
                        && self.c[(j, k)].abs() <= bound
                        && self.s[(j, k)].abs() <= bound
                })
        })
    }

    /// The full 2n×2n matrix in `(Δθ…, Δl…)` order.
    pub fn assemble(&self) -> DMatrix<f64> {
        let n = self.links();
        let mut full = DMatrix::zeros(2 * n, 2 * n);
        for j in 0..n {
            let lj = self.lengths[j];
            for k in 0..n {
                let lk = self.lengths[k];
                full[(j, k)] = lj * lk * self.c[(j, k)];
                full[(j, n + k)] = lj * self.s[(j, k)];
                full[(n + k, j)] = lj * self.s[(j, k)];
                full[(n + j, n + k)] = self.c[(j, k)];
            }
        }
        full
    }

    /// Information matrix scaled to unit diagonal: `[[C′, S′], [S′ᵀ, C′]]`
    /// with `C′ = C/m`, `S′ = S/m`.
    pub fn normalized(&self) -> DMatrix<f64> {
        let n = self.links();
        let m = self.m as f64;
        let mut d = DMatrix::zeros(2 * n, 2 * n);
        for j in 0..n {
            for k in 0..n {
                d[(j, k)] = self.c[(j, k)] / m;
                d[(j, n + k)] = self.s[(j, k)] / m;
                d[(n + k, j)] = self.s[(j, k)] / m;
                d[(n + j, n + k)] = self.c[(j, k)] / m;
            }
        }
        d
    }
}

/// Parameter stddevs and covariance for a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    /// Stddev of each `Δθ_i`, rad.
    pub sigma_theta: Vec<f64>,
    /// Stddev of each `Δl_i`, mm.
    pub sigma_l: Vec<f64>,
    /// Covariance in `(Δθ…, Δl…)` order, mixed units.
    pub covariance: DMatrix<f64>,
}

impl AccuracyReport {
    fn from_covariance(covariance: DMatrix<f64>) -> Self {
        let n = covariance.nrows() / 2;
        let sd = |i: usize| covariance[(i, i)].max(0.0).sqrt();
        Self {
            sigma_theta: (0..n).map(sd).collect(),
            sigma_l: (n..2 * n).map(sd).collect(),
            covariance,
        }
    }

    pub fn sigma_theta_deg(&self) -> Vec<f64> {
        self.sigma_theta.iter().map(|s| s.to_degrees()).collect()
    }

    /// Stddevs in `(Δθ…, Δl…)` order.
    pub fn stddevs(&self) -> Vec<f64> {
        self.sigma_theta
            .iter()
            .chain(&self.sigma_l)
            .copied()
            .collect()
    }
}

/// Information blocks at the nominal parameters.
pub fn information_matrix(
    model: &ManipulatorModel,
    plan: &CalibrationPlan,
) -> Result<InformationBlocks> {
    information_matrix_at(model, plan, &ParameterDeviation::zero(model.links()))
}

/// Information blocks with lengths and angles corrected by `dev`.
pub fn information_matrix_at(
    model: &ManipulatorModel,
    plan: &CalibrationPlan,
    dev: &ParameterDeviation,
) -> Result<InformationBlocks> {
    check_dim("plan link count", model.links(), plan.links())?;
    let n = model.links();
    let m = plan.len();
    let mut c = DMatrix::<f64>::zeros(n, n);
    let mut s = DMatrix::<f64>::zeros(n, n);
    for config in plan.configs() {
        let theta = cumulative_angles(config, dev)?;
        for j in 0..n {
            for k in (j + 1)..n {
                let (sn, cs) = (theta[k] - theta[j]).sin_cos();
                c[(j, k)] += cs;
                s[(j, k)] += sn;
            }
        }
    }
    for j in 0..n {
        c[(j, j)] = m as f64;
        for k in (j + 1)..n {
            c[(k, j)] = c[(j, k)];
            s[(k, j)] = -s[(j, k)];
        }
    }
    let blocks = InformationBlocks {
        lengths: model.actual_lengths(dev)?,
        c,
        s,
        m,
    };
    debug_assert!(blocks.satisfies_invariants());
    Ok(blocks)
}

/// `σ²·M⁻¹` for an assembled information matrix `M`.
pub fn covariance_from_information(info: &DMatrix<f64>, sigma: f64) -> Result<AccuracyReport> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(CalibError::InvalidInput(format!(
            "sigma must be non-negative, got {sigma}"
        )));
    }
    let eig = SymmetricEigen::new(info.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if ratio < CONDITION_TOLERANCE {
        return Err(CalibError::SingularInformation { ratio });
    }
    let inv = info
        .clone()
        .cholesky()
        .ok_or(CalibError::SingularInformation { ratio })?
        .inverse();
    // symmetrize away round-off
    let inv = (&inv + inv.transpose()) * 0.5;
    Ok(AccuracyReport::from_covariance(inv * (sigma * sigma)))
}

/// Parameter covariance for a plan, evaluated at the nominal parameters.
pub fn covariance(
    model: &ManipulatorModel,
    plan: &CalibrationPlan,
    sigma: f64,
) -> Result<AccuracyReport> {
    covariance_from_information(&information_matrix(model, plan)?.assemble(), sigma)
}

/// Parameter covariance re-evaluated at an identified deviation.
pub fn covariance_at(
    model: &ManipulatorModel,
    plan: &CalibrationPlan,
    dev: &ParameterDeviation,
    sigma: f64,
) -> Result<AccuracyReport> {
    covariance_from_information(&information_matrix_at(model, plan, dev)?.assemble(), sigma)
}

/// Closed-form accuracy of an optimal plan with `m` points:
/// `σ_θi = σ/(√m·l_i)`, `σ_li = σ/√m`.
pub fn analytic_optimal_stddev(
    model: &ManipulatorModel,
    m: usize,
    sigma: f64,
) -> Result<AccuracyReport> {
    if m == 0 {
        return Err(CalibError::InvalidInput(
            "experiment count must be positive".into(),
        ));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(CalibError::InvalidInput(format!(
            "sigma must be non-negative, got {sigma}"
        )));
    }
    let n = model.links();
    let m = m as f64;
    let var = sigma * sigma / m;
    let diag = model
        .link_lengths()
        .iter()
        .map(|l| var / (l * l))
        .chain(std::iter::repeat_n(var, n));
    let covariance = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(2 * n, diag));
    Ok(AccuracyReport::from_covariance(covariance))
}
