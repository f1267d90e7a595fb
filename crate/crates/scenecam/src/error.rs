use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failures of the file and command-line layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed file: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: unsupported: {msg}")]
    Unsupported { path: PathBuf, msg: String },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: duplicate entry '{entry}'")]
    Duplicate { path: PathBuf, entry: String },
    #[error(transparent)]
    Core(#[from] scenecam_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().to_path_buf(),
            msg: msg.into(),
        }
    }

    /// Process exit status: 2 usage, 3 I/O, 4 data or shape problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Core(scenecam_core::Error::Parameter(_)) => 2,
            Error::Io { .. } => 3,
            _ => 4,
        }
    }

    /// Short machine-readable category used in the error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Usage(_) => "usage",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Unsupported { .. } => "unsupported",
            Error::Parse { .. } => "parse",
            Error::Duplicate { .. } => "duplicate",
            Error::Core(e) => match e {
                scenecam_core::Error::Parameter(_) => "usage",
                scenecam_core::Error::Shape(_) => "shape",
                scenecam_core::Error::Unsupported(_) => "unsupported",
                scenecam_core::Error::Config(_) => "config",
                _ => "data",
            },
        }
    }
}
