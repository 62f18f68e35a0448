use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: parameter out of domain: {detail}")]
    ParamDomain { op: &'static str, detail: String },

    #[error("masked_softmax: row {row} has no allowed entry")]
    DegenerateRow { row: usize },

    #[error("non-finite value in {context} at coordinate {index}")]
    NonFinite { context: String, index: usize },

    #[error("index {index} out of range for {len} rows")]
    Index { index: usize, len: usize },

    #[error("backward() already ran on this tape; call reset_grads() first")]
    BackwardTwice,

    #[error("backward() requires a 1x1 scalar, got {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("line {line}: {detail}")]
    Row { line: usize, detail: String },

    #[error("empty result: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("time normalization: {0}")]
    TimeNormalization(String),

    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
