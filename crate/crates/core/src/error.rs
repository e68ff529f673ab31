use std::path::PathBuf;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{op} is not defined for {case} tasks")]
    WrongCase { op: &'static str, case: &'static str },

    #[error("batch was drawn for task {batch_task}, not task {task}")]
    ForeignBatch { task: usize, batch_task: usize },

    #[error("non-finite iterate at step {step}")]
    Diverged { step: usize },

    #[error(
        "inner stepsize alpha = {alpha} violates alpha < (2^(1/(2N)) - 1)/L = {bound} (N = {n})"
    )]
    StepsizeTooLarge { alpha: f64, bound: f64, n: usize },

    #[error("batch threshold not met: {0}")]
    Threshold(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
