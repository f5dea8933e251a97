use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The forward recursion produced a NaN or infinite state.
    #[error("non-finite state produced at step {step}")]
    NonFinite { step: usize },

    #[error("eigensolve failed: {0}")]
    Eigensolve(String),

    /// The loss is exactly zero, so ratios against `sqrt(loss)` are undefined.
    #[error("loss is zero (at minimum)")]
    AtMinimum,

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
