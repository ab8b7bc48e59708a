use std::io;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates an operation precondition.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Input data has the wrong shape or is empty.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The operation cannot run on this input (e.g. angle FFT with one rx).
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// Scenario validation failure, naming the offending field path.
    #[error("validation failed at `{field}`: {message}")]
    Validation { field: String, message: String },

    /// Malformed file contents.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
