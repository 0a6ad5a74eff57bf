use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the forecasting stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {0:?}: rank must be 1-3 with positive dimensions")]
    InvalidShape(Vec<usize>),

    #[error("shape {shape:?} needs {expected} values, got {actual}")]
    ValueCount {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("softmax row {row} is fully masked")]
    FullyMasked { row: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input data: {0}")]
    Data(String),

    #[error("duplicate timestamp {timestamp} in {source_name} stream (row {row_id:?})")]
    Duplicate {
        source_name: &'static str,
        row_id: Option<u32>,
        timestamp: String,
    },

    #[error("column {0} has no observations to fill from")]
    UnfillableColumn(String),

    #[error("no examples could be extracted: {0}")]
    EmptyExtraction(String),

    #[error("split needs at least 3 training batches, got {0}")]
    TooFewBatches(usize),

    #[error("missing gradient for parameter {0}")]
    MissingGradient(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("ensemble member {member}: {source}")]
    Member {
        member: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
