use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
///
/// Variants map onto the CLI exit-code contract through [`Error::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("divide by zero: {0}")]
    DivideByZero(String),

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("training diverged at epoch {epoch}, step {step}: {what}")]
    Diverged {
        epoch: usize,
        step: usize,
        what: String,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {}: {msg}", path.display())]
    Malformed { path: PathBuf, msg: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code: 2 argument/validation, 3 I/O, 4 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Malformed { .. } => 3,
            Error::Diverged { .. } => 4,
            _ => 2,
        }
    }
}

macro_rules! invalid {
    ($($arg:tt)*) => { $crate::error::Error::InvalidInput(format!($($arg)*)) };
}
pub(crate) use invalid;
