//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by simulation, training and file plumbing.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value; the message names the offending field.
    #[error("config error: {0}")]
    Config(String),

    /// An operation was called outside its contract (wrong shapes, terminal
    /// world, out-of-range index, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// Numeric failure during training or evaluation (non-finite loss or
    /// gradient).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A file could not be parsed; `line` is 1-based where applicable.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
