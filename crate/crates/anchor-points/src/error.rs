//! Error type shared across the toolkit.

use std::path::{Path, PathBuf};

/// Errors produced by ingestion, validation, and computation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Filesystem access failed.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A file was read but its contents could not be parsed.
    #[error("{path}: {detail}")]
    Malformed { path: PathBuf, detail: String },
    /// Inputs parsed cleanly but violate a domain contract.
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn malformed(path: impl AsRef<Path>, detail: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.as_ref().to_path_buf(),
            detail: detail.into(),
        }
    }

    pub fn invalid(detail: impl Into<String>) -> Self {
        Error::Invalid(detail.into())
    }

    /// Process exit class: 2 for usage/IO/parse failures, 1 for domain failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Malformed { .. } => 2,
            Error::Invalid(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
