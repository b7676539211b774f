use std::path::PathBuf;

/// Errors raised across the editing engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: String, found: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("file not found: {0}")]
    NotFound(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("editor transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("subtask aborted: {0}")]
    SubtaskAbort(String),

    #[error("decomposition exceeded {limit} subtasks while splitting [{lo}, {hi}]")]
    TooManySubtasks { lo: f64, hi: f64, limit: usize },

    #[error("non-finite training loss {0}")]
    NonFiniteLoss(f64),

    #[error("culling removed every Gaussian (cloud emptied)")]
    CloudEmptied,

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("rejected: {0}")]
    Rejected(String),

    #[error("image codec error: {0}")]
    Codec(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
