//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },

    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("malformed caption: {0}")]
    InvalidCaption(String),

    #[error("invalid keyword set: {0}")]
    InvalidKeywords(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at epoch {epoch}, sample {sample}: loss is not finite")]
    TrainingDiverged { epoch: usize, sample: usize },

    #[error("checkpoint is not attack-ready: val accuracy {accuracy:.4} < required {required:.4}")]
    GateViolation { accuracy: f64, required: f64 },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("bad file format: {0}")]
    BadFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shapes(op: &'static str, details: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            details: details.into(),
        }
    }
}
