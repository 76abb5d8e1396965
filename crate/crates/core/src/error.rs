use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("budget exhausted ({total} of {total} units used)")]
    BudgetExhausted { total: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("value outside its domain: {0}")]
    Domain(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("no human-annotated data to train on")]
    EmptyHistory,

    #[error("invalid task spec: {0}")]
    InvalidSpec(String),

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: feature length {got} does not match dimension {expected}")]
    RowDimension {
        line: usize,
        expected: usize,
        got: usize,
    },

    #[error("duplicate item id {0:?}")]
    DuplicateId(String),

    #[error("unknown item id {0:?}")]
    UnknownItem(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("item {got:?} is not the item awaiting a label (expected {expected:?})")]
    WrongItem {
        expected: Option<String>,
        got: String,
    },

    #[error("operation requires a {expected} task")]
    WrongTaskKind { expected: &'static str },

    #[error("no ground truth available for item {0:?}")]
    MissingGroundTruth(String),

    #[error("I/O error on {path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }
}
