use std::path::PathBuf;

use thiserror::Error;

use crate::estimator::ConvergenceTrace;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// A link or OD pair references a node that does not exist.
    #[error("topology error: {0}")]
    Topology(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("OD pair {origin} -> {destination} is unreachable")]
    Unreachable { origin: u32, destination: u32 },

    #[error("OD pair has identical origin and destination (node {0})")]
    DegenerateOd(u32),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("solver diverged at epoch {epoch} (loss {loss:e})")]
    Diverged {
        epoch: usize,
        loss: f64,
        trace: Box<ConvergenceTrace>,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, e: csv::Error) -> Self {
        Error::io(path, std::io::Error::other(e))
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.to_string(),
        }
    }
}
