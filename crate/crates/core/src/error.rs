use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("missing manifest: {}", .0.display())]
    MissingManifest(PathBuf),

    #[error("row-count mismatch: view `{view}` has {found} rows, expected {expected}")]
    RowMismatch {
        view: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config key `{0}` is missing")]
    MissingKey(String),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for failures caused by the numbers rather than the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::NonFinite(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
