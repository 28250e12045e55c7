use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("slice series is empty")]
    EmptySeries,

    #[error("slice {index} has shape {found:?}, expected {expected:?}")]
    InconsistentSlices {
        index: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("cannot decode {}: {reason}", path.display())]
    Decode { path: PathBuf, reason: String },

    #[error("manifest row {row}: {reason}")]
    Schema { row: usize, reason: String },

    #[error("duplicate scan_id {0:?}")]
    DuplicateId(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("invalid target shape {0:?}")]
    InvalidTarget((usize, usize, usize)),

    #[error("category {0} has zero count")]
    ZeroCategoryCount(usize),

    #[error("non-finite input")]
    NonFiniteInput,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bad channel grouping: {0}")]
    BadGrouping(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("npy format: {0}")]
    Npy(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
