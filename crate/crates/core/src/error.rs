use thiserror::Error;

use crate::qp::QpError;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum PdiError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in column `{column}`, row {row}")]
    NonFinite { row: usize, column: String },
    #[error("dose out of bounds, row {row}: {value} not in [{lo}, {hi}]")]
    DoseOutOfBounds { row: usize, value: f64, lo: f64, hi: f64 },
    #[error("non-positive weight, row {row}: {value}")]
    NonPositiveWeight { row: usize, value: f64 },
    #[error("invalid dose bounds [{lo}, {hi}]")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("dataset has no rows")]
    Empty,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset carries no weights; supply a weight source")]
    MissingWeights,
    #[error("all covariate rows are identical; median heuristic is undefined")]
    DegenerateBandwidth,
    #[error("empty split side: {0}")]
    EmptySplit(&'static str),
    #[error("only one outcome class present: {0}")]
    SingleClass(&'static str),
    #[error("value {value} outside support [{lo}, {hi}]")]
    OutOfSupport { value: f64, lo: f64, hi: f64 },
    #[error("not enough rows: need more than {needed}, have {have}")]
    InsufficientRows { needed: usize, have: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PdiError>;
