use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    Corruption(String),

    #[error("numerical failure at step {step}: {detail}")]
    Numerical { step: usize, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class: 2 for format and I/O problems,
    /// 3 for validation problems, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format(_) | Error::Corruption(_) | Error::Io { .. } => 2,
            Error::Dimension(_) | Error::Validation(_) | Error::Degenerate(_) => 3,
            Error::Numerical { .. } => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
