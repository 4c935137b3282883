use std::path::PathBuf;

/// Errors produced anywhere in the training engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("finite-difference oracle failed: {0}")]
    OracleFailure(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("label schedule violation: {0}")]
    ScheduleViolation(String),
    #[error("label domain error: {0}")]
    LabelDomain(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("dataset generation error: {0}")]
    Generation(String),
    #[error("ingestion error in {path}: {message}")]
    Ingestion { path: PathBuf, message: String },
    #[error("training diverged at step {step}, iteration {iteration}: {message}")]
    Divergence {
        step: usize,
        iteration: usize,
        message: String,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("comparison error: {0}")]
    Comparison(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
