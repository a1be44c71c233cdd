use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch, expected {expected}, found {found}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("{op}: input contains NaN or infinite values")]
    NonFinite { op: &'static str },

    #[error("regularization term C must be positive and finite, got {0}")]
    InvalidRegularization(f64),

    #[error("{op}: matrix is singular to working precision")]
    Singular { op: &'static str },

    #[error(
        "inner batch system is ill-conditioned (condition estimate {condition:.3e}); \
         use a smaller retraining batch or a smaller C (stronger regularization)"
    )]
    IllConditioned { condition: f64 },

    #[error("retraining stream is empty")]
    EmptyStream,

    #[error("retraining stream misaligned at batch {batch}: {detail}")]
    MisalignedStream { batch: usize, detail: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("{path}: bad IDX magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },

    #[error("{path}: truncated file, expected {expected} bytes of payload, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    #[error("config error for `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}
