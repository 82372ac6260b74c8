use thiserror::Error;

#[derive(Debug, Error)]
pub enum SagdError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("spectral weight is zero on every bin")]
    DegenerateWeight,
    #[error("covariance has no eigenvalue above zero")]
    DegenerateCovariance,
    #[error("smoothed density is degenerate: {0}")]
    DegenerateDensity(String),
    #[error("degenerate noise level: {0}")]
    DegenerateNoiseLevel(String),
    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },
    #[error("ensemble diverged at step {step} (max |state| = {max_abs:e})")]
    Divergence { step: usize, max_abs: f64 },
    #[error("internal consistency check failed: {0}")]
    Inconsistent(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SagdError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(SagdError::InvalidArgument(msg.into()))
}
