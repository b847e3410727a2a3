use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GctmError>;

#[derive(Debug, Error)]
pub enum GctmError {
    /// Batch or parameter shapes disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// An argument lies outside the operation's domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A NaN or infinity appeared where finite values are required.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl GctmError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        GctmError::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GctmError::InvalidArgument(msg.into())
    }

    pub(crate) fn non_finite(msg: impl Into<String>) -> Self {
        GctmError::NonFinite(msg.into())
    }
}
