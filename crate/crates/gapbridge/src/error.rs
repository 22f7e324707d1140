use std::path::{Path, PathBuf};

use gapbridge_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    /// A file parsed but its contents are unusable.
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: CoreError,
    },
    #[error("{}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn manifest(path: &Path, message: impl Into<String>) -> Self {
        Error::Manifest {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    /// Process exit code: 2 for IO and format problems, 1 for everything
    /// the caller could fix by changing arguments or data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Json { .. } | Error::Csv { .. } | Error::Manifest { .. } => 2,
            Error::File { source, .. } | Error::Core(source) => match source {
                CoreError::Format(_) | CoreError::Corrupt { .. } => 2,
                _ => 1,
            },
            Error::Usage(_) => 1,
        }
    }
}
