use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidTopology(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("instance too large for exhaustive enumeration: {weights} weights (limit {limit})")]
    InstanceTooLarge { weights: usize, limit: usize },

    #[error("idx parse error: {0}")]
    Idx(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("missing data file: {}", .0.display())]
    MissingData(PathBuf),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
