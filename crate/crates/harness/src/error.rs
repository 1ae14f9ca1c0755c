use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] pointattack::Error),
    #[error("{0}")]
    Serialize(String),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    pub fn usage(message: impl Into<String>) -> Self {
        HarnessError::Usage(message.into())
    }

    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Process exit code: 2 usage, 3 I/O, 4 numeric or data.
    pub fn exit_code(&self) -> i32 {
        use pointattack::Error as E;
        match self {
            HarnessError::Usage(_) | HarnessError::Core(E::InvalidArgument(_)) => 2,
            HarnessError::Io { .. } | HarnessError::Manifest { .. } | HarnessError::Core(E::Io { .. }) => 3,
            HarnessError::Core(_) | HarnessError::Serialize(_) => 4,
        }
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Serialize(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Serialize(e.to_string())
    }
}
