use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad shapes, out-of-range parameters, malformed inputs.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A NaN or infinity showed up where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training diverged at a specific optimizer step.
    #[error("non-finite loss at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    /// Caller violated an API contract (e.g. backward from a non-scalar node).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A metric is undefined for the given input (e.g. zero noise variance).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 2 config, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) | Error::Contract(_) => 2,
            Error::Numeric(_) | Error::Diverged { .. } | Error::UndefinedMetric(_) => 3,
            Error::Format { .. } | Error::Io { .. } => 4,
        }
    }
}
