//! Error types shared across the crate.

use thiserror::Error;

/// Unified error type for tensor, model, attack, and I/O operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input values are outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value is invalid or out of range.
    #[error("configuration error: {0}")]
    Config(String),

    /// The API was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),

    /// The optimization produced a non-finite loss.
    #[error("divergence: non-finite loss at iteration {iteration}")]
    Divergence { iteration: usize },

    /// A checkpoint file failed validation on load.
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    /// A data file (dataset, pixmap) failed validation on load.
    #[error("corrupt data file: {0}")]
    CorruptData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
