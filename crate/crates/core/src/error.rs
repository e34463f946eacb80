use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A NaN or infinity showed up in a forward or backward pass.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// API misuse (e.g. backward on an untaped value).
    #[error("usage error: {0}")]
    Usage(String),

    /// Invalid input data (duplicate ids, empty dataset, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Metric could not be computed (e.g. every class undefined).
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// Malformed tensor file; `offset` is the byte position of the problem.
    #[error("format error: {path}: byte {offset}: {reason}")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
