use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("missing artifact `{name}` at {path}")]
    MissingArtifact { name: &'static str, path: PathBuf },

    #[error("artifact chain mismatch: {0}")]
    ArtifactMismatch(String),

    #[error("unsupported artifact version: {0}")]
    Version(String),

    #[error("baseline-only contract violated: {0}")]
    BaselineContract(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit status for the command-line front end:
    /// 1 usage/config, 2 artifact chain, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingArtifact { .. } | Error::ArtifactMismatch(_) | Error::Version(_) => 2,
            Error::NonFinite(_) => 3,
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
