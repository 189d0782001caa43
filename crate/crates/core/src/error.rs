use std::io;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor extents.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Non-finite value or a domain violation (log of a non-positive number, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A precondition of an operation was violated.
    #[error("contract error: {0}")]
    Contract(String),

    /// Malformed HSIC or checkpoint file.
    #[error("format error: {0}")]
    Format(String),

    /// Invalid run configuration or override.
    #[error("config error: {0}")]
    Config(String),

    /// Training diverged.
    #[error(
        "training diverged at step {step} (batch {batch}): loss {loss}, max |grad| {max_grad}"
    )]
    Diverged {
        step: u64,
        batch: usize,
        loss: f64,
        max_grad: f64,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}

pub(crate) fn contract_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
