use thiserror::Error;

/// Process exit codes. Every failure maps to exactly one.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 1;
    pub const NUMERIC: i32 = 2;
    pub const ORACLE: i32 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] mvsc_core::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image export failed: {0}")]
    Image(#[from] image::ImageError),

    #[error("oracle checks failed: {0}")]
    Oracle(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numeric() => exit::NUMERIC,
            CliError::Oracle(_) => exit::ORACLE,
            _ => exit::VALIDATION,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
