use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {layer}: expected {expected}, got {actual}")]
    Shape {
        layer: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("test-split data reached {stage}: run {run} is tagged test")]
    TestDataAccess { stage: String, run: String },

    #[error("empty dataset: {0}")]
    EmptyData(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        layer: impl Into<String>,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            layer: layer.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
