use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },

    #[error("non-finite value produced by tape node {node} ({op})")]
    NonFinite { node: usize, op: String },

    #[error("integration aborted at step {step}: non-finite state")]
    IntegrationDiverged { step: usize },

    #[error("non-finite value during gradient check at coordinate {coord}")]
    GradCheckNonFinite { coord: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("normalization domain violation at index {index}: value {value} outside {bounds}")]
    NormalizationDomain {
        index: usize,
        value: f64,
        bounds: String,
    },

    #[error("data format error at line {line}: {msg}")]
    DataFormat { line: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}: {msg}")]
    Diverged { epoch: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
