use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// An operation that needs at least one element got none.
    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    /// A value outside the operation's domain (n = 0, K > N, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke an operation contract (non-scalar loss, unnormalized cloud, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Inconsistent model or training configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// The tape holds an op that the requested differentiation mode cannot handle.
    #[error("unsupported op `{op}` for {mode}")]
    Capability {
        op: &'static str,
        mode: &'static str,
    },

    /// Malformed point-cloud file.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Why a checkpoint file was rejected.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("file is truncated")]
    Truncated,
    #[error("checksum mismatch")]
    Checksum,
    #[error("missing entry `{0}`")]
    Missing(String),
    #[error("malformed entry `{name}`: {detail}")]
    Malformed { name: String, detail: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
