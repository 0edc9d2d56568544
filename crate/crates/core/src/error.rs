use thiserror::Error;

/// Errors produced by the calibration library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The stacked identification Jacobian lost column rank.
    #[error(
        "rank deficient identification Jacobian (singular value ratio {ratio:.3e}); plan is not identifiable"
    )]
    RankDeficient { ratio: f64 },

    /// The information matrix failed the relative eigenvalue test.
    #[error(
        "singular information matrix (eigenvalue ratio {ratio:.3e}); plan is not identifiable"
    )]
    SingularInformation { ratio: f64 },

    #[error("insufficient points: {points} configurations for {links} links, requires m >= n")]
    InsufficientPoints { points: usize, links: usize },

    #[error("infeasible joint limits: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, CalibError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(CalibError::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
