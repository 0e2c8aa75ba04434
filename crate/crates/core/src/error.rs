use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("degenerate mask: {0}")]
    DegenerateMask(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical fault in parameter `{param}`")]
    NumericalFault { param: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("parse error in {}: {position}: {message}", path.display())]
    Parse {
        path: PathBuf,
        position: String,
        message: String,
    },

    #[error("record `{record_id}` failed validation: {message}")]
    Validation { record_id: String, message: String },

    #[error("configuration error: {0}")]
    Spec(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("no prediction for record `{record_id}`")]
    MissingPrediction { record_id: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("scoring matrix error: {0}")]
    Matrix(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
