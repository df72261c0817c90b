use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer geometry does not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The caller violated an operation's contract (empty input, bad index, ...).
    #[error("usage: {0}")]
    Usage(String),

    /// A model or generator was configured inconsistently.
    #[error("config: {0}")]
    Config(String),

    /// A metric has no defined value on this input (e.g. single-class AUC).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// I/O failure, annotated with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents are not a valid instance of the format.
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// A required model checkpoint is missing.
    #[error("checkpoint not found: {0}")]
    CheckpointNotFound(PathBuf),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
