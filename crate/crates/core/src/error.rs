use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("graph is empty after {k}-core filtering")]
    EmptyAfterFiltering { k: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value in `{tensor}` ({detail})")]
    NonFinite { tensor: String, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("report undefined: {0}")]
    Undefined(String),
}

impl KgError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KgError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = KgError> = std::result::Result<T, E>;
