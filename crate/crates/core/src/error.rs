use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DflError>;

#[derive(Debug, Error)]
pub enum DflError {
    #[error("event arrives at {arrival} h, after the snapshot at {snapshot} h")]
    FutureEvent { arrival: f64, snapshot: f64 },

    #[error("invalid snapshot: deadline {deadline} h must satisfy 0 < deadline <= snapshot/2 (snapshot {snapshot} h)")]
    InvalidSnapshot { snapshot: f64, deadline: f64 },

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid feature vector: {0}")]
    InvalidFeatures(String),

    #[error("invalid event: {0}")]
    InvalidEvent(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch} (objective {objective})")]
    Diverged { epoch: usize, objective: f64 },

    #[error("insufficient rows: {0}")]
    InsufficientRows(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl DflError {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        DflError::Parse {
            line,
            msg: msg.into(),
        }
    }
}
