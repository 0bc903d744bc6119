use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{file}: [{section}] {field}: {message}")]
    Parse {
        file: String,
        section: String,
        field: String,
        message: String,
    },

    #[error("invariant violated ({constraint}): {detail}")]
    Invariant { constraint: String, detail: String },

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("search space too large: {binaries} binaries exceeds the limit of {limit}")]
    SearchSpace { binaries: usize, limit: usize },

    #[error("no feasible primal point found")]
    NoPrimalFound,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invariant(constraint: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Invariant {
            constraint: constraint.into(),
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
