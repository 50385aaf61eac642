use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("config field {pointer}: {message}")]
    ConfigField { pointer: String, message: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("index {index} out of range 0..{len} in {what}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("duplicate id {0}")]
    DuplicateId(u64),

    #[error("store is frozen")]
    Frozen,

    #[error("missing {what} for id {id}")]
    Missing { what: &'static str, id: u64 },

    #[error("no checkpoint at {}; run `train` first", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
