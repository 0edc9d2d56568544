//! Geometric model of an n-link planar serial chain.
//!
//! The end-effector position is
//!
//! ```text
//! x = Σ (l_i + Δl_i) cos θ_i,   y = Σ (l_i + Δl_i) sin θ_i,
//! θ_i = q_1 + … + q_i + Δθ_i
//! ```
//!
//! where `Δθ_i` is the cumulative angular deviation of link `i`. The
//! identified parameter vector is laid out as `(Δθ_1 … Δθ_n, Δl_1 … Δl_n)`,
//! the same column order as [`jacobian`].
//!
//! Lengths are millimetres, angles are radians and never wrapped.

use nalgebra::{DVector, Matrix2xX};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, CalibError, Result};

/// Nominal link lengths of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulatorModel {
    link_lengths: Vec<f64>,
}

impl ManipulatorModel {
    pub fn new(link_lengths: Vec<f64>) -> Result<Self> {
        if link_lengths.is_empty() {
            return Err(CalibError::InvalidModel(
                "a manipulator needs at least one link".into(),
            ));
        }
        if let Some((i, l)) = link_lengths
            .iter()
            .enumerate()
            .find(|(_, l)| !(l.is_finite() && **l > 0.0))
        {
            return Err(CalibError::InvalidModel(format!(
                "link {} has non-positive length {l}",
                i + 1
            )));
        }
        Ok(Self { link_lengths })
    }

    pub fn link_lengths(&self) -> &[f64] {
        &self.link_lengths
    }

    /// Number of links `n`.
    pub fn links(&self) -> usize {
        self.link_lengths.len()
    }

    /// Number of identified parameters, `2n`.
    pub fn parameter_count(&self) -> usize {
        2 * self.links()
    }

    /// Link lengths with the deviation applied.
    pub fn actual_lengths(&self, dev: &ParameterDeviation) -> Result<Vec<f64>> {
        check_dim("deviation length", self.links(), dev.links())?;
        Ok(self
            .link_lengths
            .iter()
            .zip(&dev.dl)
            .map(|(l, d)| l + d)
            .collect())
    }
}

/// Length and cumulative angle deviations `{Δl_i, Δθ_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDeviation {
    /// Length deviations, mm.
    pub dl: Vec<f64>,
    /// Cumulative angular deviations, rad.
    pub dtheta: Vec<f64>,
}

impl ParameterDeviation {
    pub fn new(dl: Vec<f64>, dtheta: Vec<f64>) -> Result<Self> {
        check_dim("deviation vectors", dl.len(), dtheta.len())?;
        Ok(Self { dl, dtheta })
    }

    pub fn zero(links: usize) -> Self {
        Self {
            dl: vec![0.0; links],
            dtheta: vec![0.0; links],
        }
    }

    /// Builds a deviation from per-joint angular offsets `Δq_j`, taking
    /// `Δθ_i = Δq_1 + … + Δq_i`.
    pub fn from_joint_offsets(dl: Vec<f64>, dq: &[f64]) -> Result<Self> {
        check_dim("joint offsets", dl.len(), dq.len())?;
        let dtheta = dq
            .iter()
            .scan(0.0, |acc, d| {
                *acc += d;
                Some(*acc)
            })
            .collect();
        Ok(Self { dl, dtheta })
    }

    /// Per-joint offsets `Δq_i = Δθ_i − Δθ_{i−1}` with `Δθ_0 = 0`.
    pub fn joint_offsets(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.dtheta
            .iter()
            .map(|t| {
                let d = t - prev;
                prev = *t;
                d
            })
            .collect()
    }

    pub fn links(&self) -> usize {
        self.dl.len()
    }

    /// Parameter vector in Jacobian column order `(Δθ…, Δl…)`.
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            2 * self.links(),
            self.dtheta.iter().chain(&self.dl).copied(),
        )
    }

    /// Inverse of [`ParameterDeviation::to_vector`].
    pub fn from_vector(v: &DVector<f64>) -> Result<Self> {
        if !v.len().is_multiple_of(2) {
            return Err(CalibError::InvalidInput(format!(
                "parameter vector has odd length {}",
                v.len()
            )));
        }
        let n = v.len() / 2;
        Ok(Self {
            dtheta: v.rows(0, n).iter().copied().collect(),
            dl: v.rows(n, n).iter().copied().collect(),
        })
    }

    /// Largest absolute component, mixing mm and rad.
    pub fn max_abs(&self) -> f64 {
        self.dl
            .iter()
            .chain(&self.dtheta)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Joint angles `q_1 … q_n` of one configuration, rad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConfiguration {
    pub q: Vec<f64>,
}

impl JointConfiguration {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.iter().any(|v| !v.is_finite()) {
            return Err(CalibError::InvalidInput(
                "joint angles must be finite".into(),
            ));
        }
        Ok(Self { q })
    }

    pub fn from_degrees(q_deg: &[f64]) -> Result<Self> {
        Self::new(q_deg.iter().map(|d| d.to_radians()).collect())
    }

    pub fn to_degrees(&self) -> Vec<f64> {
        self.q.iter().map(|r| r.to_degrees()).collect()
    }

    pub fn links(&self) -> usize {
        self.q.len()
    }
}

/// End-effector position, mm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanarPosition {
    pub x: f64,
    pub y: f64,
}

impl PlanarPosition {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Link orientations `θ_i = Σ_{j≤i} q_j + Δθ_i`.
pub fn cumulative_angles(
    config: &JointConfiguration,
    dev: &ParameterDeviation,
) -> Result<Vec<f64>> {
    check_dim("cumulative angles", config.links(), dev.links())?;
    let mut acc = 0.0;
    Ok(config
        .q
        .iter()
        .zip(&dev.dtheta)
        .map(|(q, dt)| {
            acc += q;
            acc + dt
        })
        .collect())
}

pub fn forward_kinematics(
    model: &ManipulatorModel,
    config: &JointConfiguration,
    dev: &ParameterDeviation,
) -> Result<PlanarPosition> {
    check_dim("configuration length", model.links(), config.links())?;
    let lengths = model.actual_lengths(dev)?;
    let theta = cumulative_angles(config, dev)?;
    let (x, y) = lengths
        .iter()
        .zip(&theta)
        .fold((0.0, 0.0), |(x, y), (l, t)| {
            let (s, c) = t.sin_cos();
            (x + l * c, y + l * s)
        });
    Ok(PlanarPosition { x, y })
}

/// Derivative of the end-effector position with respect to
/// `(Δθ_1 … Δθ_n, Δl_1 … Δl_n)`, evaluated at the given deviation.
pub fn jacobian(
    model: &ManipulatorModel,
    config: &JointConfiguration,
    dev: &ParameterDeviation,
) -> Result<Matrix2xX<f64>> {
    check_dim("configuration length", model.links(), config.links())?;
    let n = model.links();
    let lengths = model.actual_lengths(dev)?;
    let theta = cumulative_angles(config, dev)?;
    let mut jac = Matrix2xX::zeros(2 * n);
    for (i, (l, t)) in lengths.iter().zip(&theta).enumerate() {
        let (s, c) = t.sin_cos();
        jac[(0, i)] = -l * s;
        jac[(1, i)] = l * c;
        jac[(0, n + i)] = c;
        jac[(1, n + i)] = s;
    }
    Ok(jac)
}

/// Element-wise accumulation of a correction step.
pub fn apply_deviation(
    acc: &ParameterDeviation,
    step: &ParameterDeviation,
) -> Result<ParameterDeviation> {
    check_dim("deviation accumulation", acc.links(), step.links())?;
    Ok(ParameterDeviation {
        dl: acc.dl.iter().zip(&step.dl).map(|(a, b)| a + b).collect(),
        dtheta: acc
            .dtheta
            .iter()
            .zip(&step.dtheta)
            .map(|(a, b)| a + b)
            .collect(),
    })
}
