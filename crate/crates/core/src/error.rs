use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("invalid cell at row {row} (`{model}`), column {column} (`{item}`): {message}")]
    InvalidCell {
        row: usize,
        column: usize,
        model: String,
        item: String,
        message: String,
    },

    #[error("duplicate {axis} identifier `{id}`")]
    DuplicateId { axis: &'static str, id: String },

    #[error("ragged row {row}: expected {expected} cells, found {found}")]
    RaggedRow { row: usize, expected: usize, found: usize },

    #[error("{axis} index {index} out of range (length {len})")]
    IndexOutOfRange {
        axis: &'static str,
        index: usize,
        len: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("posterior schema error: {0}")]
    Schema(String),

    #[error("degenerate response matrix: {0}")]
    DegenerateMatrix(String),

    #[error("non-finite ELBO at step {step}")]
    NonFiniteElbo { step: usize },

    #[error("unknown {axis} identifier `{id}`")]
    UnknownId { axis: &'static str, id: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
