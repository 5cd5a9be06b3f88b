use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(
        "power iteration did not converge after {iterations} iterations (best estimate {best})"
    )]
    Convergence { best: f64, iterations: usize },

    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    Definiteness { pivot: f64, index: usize },

    #[error("unstable dynamics: {0}")]
    Stability(String),

    #[error("cannot derive a positive norm bound R: every prefix sample is zero")]
    DegenerateR,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
