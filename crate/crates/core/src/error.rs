use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the engine. The variants line up with the CLI exit-code
/// categories (config, data, provider).
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch for image {image_id}: expected {expected}, found {found}")]
    DimensionMismatch {
        image_id: String,
        expected: usize,
        found: usize,
    },

    #[error("entity {entity_id} references unknown image {image_id}")]
    DanglingImage { entity_id: String, image_id: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("scorer provider failed: {0}")]
    Provider(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, line: usize, message: impl ToString) -> Self {
        Error::Malformed {
            path: path.into(),
            line,
            message: message.to_string(),
        }
    }
}
