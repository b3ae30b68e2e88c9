use thiserror::Error;

/// Errors raised by the numerical kernels.
///
/// Rank collapse is never an error: it shows up as a `-inf` log-volume.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    Asymmetric(f64),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:.3e})")]
    NotPositiveSemidefinite(f64),

    #[error("covariance is not positive definite (eigenvalue ratio {0:.3e})")]
    NotPositiveDefinite(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("trajectory diverged at step {step}: |theta| = {norm:.3e}")]
    Divergence { step: usize, norm: f64 },

    #[error("unstable step size: eta * lambda_max = {0:.6}")]
    Unstable(f64),

    #[error("trajectory endpoints do not match (gap {0:.3e})")]
    EndpointMismatch(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures caused by the numerics (divergence, instability)
    /// rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Divergence { .. } | Error::Unstable(_)
        )
    }
}
