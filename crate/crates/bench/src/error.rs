use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("corrupt weights container: {0}")]
    Container(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Core(#[from] spp_core::Error),
}

impl BenchError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        BenchError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        BenchError::Format { path: path.into(), reason: reason.into() }
    }

    /// Process exit status for the CLI: 2 config, 3 I/O, 4 invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::Io { .. } | BenchError::Format { .. } | BenchError::Container(_) => 3,
            BenchError::Invariant(_) => 4,
            BenchError::Core(e) => match e {
                spp_core::Error::MalformedInput(_) | spp_core::Error::Parse { .. } => 3,
                _ => 2,
            },
        }
    }
}
