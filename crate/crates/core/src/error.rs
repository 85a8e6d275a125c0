use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is rank deficient: smallest singular value {sigma_min:e} <= tolerance {tol:e}")]
    RankDeficient { sigma_min: f64, tol: f64 },

    #[error("{what} is ill conditioned: condition number {cond:e} exceeds {limit:e}")]
    IllConditioned {
        what: &'static str,
        cond: f64,
        limit: f64,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("infeasible design: {0}")]
    Infeasible(String),

    #[error("combination matrix not certified: {0}")]
    NotCertified(String),

    #[error("matrix is numerically singular: {0}")]
    Singular(String),

    #[error("graph is not connected")]
    Disconnected,

    #[error("parse error in {source_name} line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }
}
