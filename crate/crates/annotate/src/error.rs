use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AnnotateError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("request{} failed after {attempts} attempt(s): {message}", id.as_ref().map(|i| format!(" for text '{i}'")).unwrap_or_default())]
    Transport {
        id: Option<String>,
        attempts: u32,
        message: String,
    },

    #[error("no recorded response in {path} for request {hash}")]
    CassetteMiss { path: PathBuf, hash: String },

    #[error("io error on {0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),

    #[error("{path}, line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("annotation id '{0}' is not in the dataset")]
    UnknownId(String),

    #[error("duplicate annotation id '{0}'")]
    DuplicateId(String),

    #[error("invalid endpoint configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] tcbm_core::Error),
}

impl AnnotateError {
    /// True for failures of the endpoint or cassette rather than of inputs.
    pub fn is_external(&self) -> bool {
        matches!(self, Self::Transport { .. } | Self::CassetteMiss { .. })
    }

    pub(crate) fn for_text(self, text_id: &str) -> Self {
        match self {
            Self::Transport { attempts, message, .. } => Self::Transport {
                id: Some(text_id.to_string()),
                attempts,
                message,
            },
            other => other,
        }
    }
}
