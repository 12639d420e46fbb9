use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A corpus or feedback line that failed validation. `line` is 1-based.
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("unknown template {0}")]
    UnknownTemplate(String),

    #[error("empty input")]
    EmptyInput,

    #[error("{line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },

    #[error("no data")]
    NoData,

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("no contexts")]
    NoContexts,

    #[error("divergence at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("degenerate labels")]
    DegenerateLabels,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("hessian sum plus l2_lambda is zero")]
    ZeroDenominator,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("AUROC undefined")]
    AurocUndefined,

    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u32, found: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unknown warning id {0}")]
    UnknownWarning(String),

    #[error("no model for {0}")]
    UnknownCwe(String),

    #[error("every grid combination failed to train")]
    GridExhausted,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn record(line: usize, message: impl Into<String>) -> Self {
        Error::Record {
            line,
            message: message.into(),
        }
    }
}
