use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed header: {reason}")]
    Header { path: PathBuf, reason: String },
    #[error("{path}: payload size mismatch: expected {expected} bytes, found {actual}")]
    Size {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: {reason}")]
    Data { path: PathBuf, reason: String },
    #[error("degenerate motion spec: {0}")]
    DegenerateSpec(String),
    #[error("invalid motion spec: {0}")]
    Spec(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] wmoco_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code: 2 usage or configuration, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        use wmoco_core::Error as C;
        match self {
            Error::Config(_) | Error::Spec(_) => 2,
            Error::Core(C::Config(_) | C::Parameter(_) | C::Step(_)) => 2,
            Error::Core(C::Numeric(_)) => 4,
            _ => 3,
        }
    }
}
