use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A mathematical precondition failed (matrix not positive definite, singular solve, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("outcome space of size {size} exceeds the enumeration limit {limit}")]
    Capacity { size: u128, limit: u128 },

    #[error("non-finite state at step {step}{}", path.map(|p| format!(" of path {p}")).unwrap_or_default())]
    Divergence { step: usize, path: Option<u64> },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
