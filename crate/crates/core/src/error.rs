use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("timestamp at row {row} is not after the previous row ({timestamp})")]
    NonMonotoneTimestamp { row: usize, timestamp: String },

    #[error("unparseable timestamp at row {row}: {value:?}")]
    BadTimestamp { row: usize, value: String },

    #[error("column {0:?} has no valid cells")]
    EmptyColumn(String),

    #[error("column {0:?} not found")]
    UnknownColumn(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("series too short: need at least {required} rows, got {actual}")]
    TooShort { required: usize, actual: usize },

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
