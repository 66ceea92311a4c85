use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the scanning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed hex at digit {offset}: {reason}")]
    MalformedHex { offset: usize, reason: &'static str },

    #[error("vocabulary capacity must be at least 2, got {0}")]
    InvalidCapacity(usize),

    #[error("token id {id} is outside the vocabulary (size {size})")]
    UnknownId { id: usize, size: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("window has no unmasked positions")]
    EmptyWindow,

    #[error("contract has no tokens")]
    EmptyContract,

    #[error("no per-window predictions to aggregate")]
    EmptyBatch,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dataset has fewer than two classes")]
    DatasetDegenerate,

    #[error("label taxonomy mismatch: {0}")]
    LabelMismatch(String),

    #[error("malformed label {0:?}")]
    MalformedLabel(String),

    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("network error: {0}")]
    Network(String),

    #[error("rate limited by API: {0}")]
    RateLimited(String),

    #[error("unexpected API response: {0}")]
    ApiFormat(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
