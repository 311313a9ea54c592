use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dimension mismatch for record '{id}': expected {expected}, got {got}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        got: usize,
    },

    #[error("unknown split tag '{0}'")]
    UnknownSplit(String),

    #[error("duplicate id '{0}'")]
    DuplicateId(String),

    #[error("label {label} of record '{id}' is out of range for {num_classes} classes")]
    LabelOutOfRange {
        id: String,
        label: usize,
        num_classes: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unestimable CAV for concept {0}: needs both positive and negative training examples")]
    UnestimableCav(u32),

    #[error("zero-norm vector in {0}")]
    ZeroNorm(&'static str),

    #[error("zero variance in micro-concept embeddings")]
    ZeroVariance,

    #[error("need at least {needed} items, got {got}: {what}")]
    TooFew {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("empty split: {0}")]
    EmptySplit(&'static str),

    #[error("unknown concept id {0}")]
    UnknownConcept(u32),

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("labeling cluster {cluster} failed: {source}")]
    Labeler {
        cluster: usize,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },

    #[error("model has no residual layer")]
    NoResidual,

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
