use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("word id {id} is out of range for a vocabulary of {size} words")]
    InvalidWordId { id: usize, size: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("non-finite gradient at word position {position}")]
    NonFiniteGradient { position: usize },

    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("label set is empty")]
    EmptyLabelSet,

    #[error("label index {label} out of range for {num_labels} labels")]
    InvalidLabel { label: usize, num_labels: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("candidate extractor failed at position {position}: {message}")]
    Extractor { position: usize, message: String },

    #[error("brute-force lattice too large: {0}")]
    LatticeTooLarge(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset {path}: {malformed} of {total} lines malformed (first: line {first_line})")]
    TooManyMalformed {
        path: PathBuf,
        malformed: usize,
        total: usize,
        first_line: usize,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("report bundle: {0}")]
    Bundle(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
