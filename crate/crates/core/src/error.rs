use alloc::string::String;

/// Errors produced by model construction, planning, sampling and checks.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("model has no closed-form posterior for this view")]
    NoClosedFormPosterior,

    #[error("model has no exact sampler")]
    NoExactSampler,

    #[error("cannot bound the posterior covariance envelope: {0}")]
    EnvelopeUnavailable(String),

    #[error("plan does not match model: {0}")]
    PlanMismatch(String),

    #[error("Metropolis correction requested but no log-density oracle is available")]
    MissingLogDensity,

    #[error("sampler diverged at iteration {iteration} (|x| = {norm:e})")]
    Divergence { iteration: usize, norm: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
