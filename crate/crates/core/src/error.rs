use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfdError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("encoder failure: {0}")]
    EncoderFailure(String),

    #[error("cannot normalise a zero vector ({0})")]
    Normalization(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite loss term `{term}` (value {value})")]
    NonFiniteLoss { term: String, value: f64 },

    #[error("{path}: bad file format at byte offset {offset}: {reason}")]
    Format { path: PathBuf, offset: u64, reason: String },

    #[error("{path}: truncated file (expected {expected} bytes, found {found})")]
    Truncated { path: PathBuf, expected: u64, found: u64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, ProfdError>;

impl ProfdError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ProfdError::Io {
            path: path.into(),
            source,
        }
    }
}
