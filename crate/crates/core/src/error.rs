use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index ({row}, {col}) outside a {rows}x{cols} pattern")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("sample covariance has rank {rank}, need at least {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("subset enumeration over {columns} columns refused (limit is {limit})")]
    EnumerationGuard { columns: usize, limit: usize },

    #[error("non-finite value in coupling layer {layer}")]
    NonFinite { layer: usize },

    #[error("non-finite {0}")]
    NonFiniteValue(&'static str),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("matrix is singular")]
    Singular,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("rotation is not orthogonal (max |UU^T - I| = {deviation:e})")]
    NonOrthogonal { deviation: f64 },

    #[error("invertibility not achieved after {attempts} attempts")]
    NotInvertible { attempts: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
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
    pub(crate) fn shape(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure stems from bad user input rather than a runtime fault.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_)
                | Error::Parse { .. }
                | Error::UnknownStrategy { .. }
                | Error::ShapeMismatch { .. }
                | Error::DimensionMismatch { .. }
                | Error::IndexOutOfBounds { .. }
                | Error::EnumerationGuard { .. }
                | Error::Json(_)
        )
    }
}
