//! Crate-wide error type with coarse categories that map onto CLI exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// Invalid configuration (bad grid size, unknown system, malformed config file).
    #[error("config error: {0}")]
    Config(String),

    /// API misuse: shape mismatch, backward through an unrecorded value, etc.
    #[error("usage error: {0}")]
    Usage(String),

    /// Numerical failure: NaN/Inf in a solver state, divergence, ill-conditioning.
    #[error("numerics error: {0}")]
    Numerics(String),

    /// An artifact's recorded digest does not match the expected upstream digest.
    #[error("digest mismatch: {0}")]
    DigestMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        CoreError::Usage(msg.into())
    }
    pub fn numerics(msg: impl Into<String>) -> Self {
        CoreError::Numerics(msg.into())
    }
}
