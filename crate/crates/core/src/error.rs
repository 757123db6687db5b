use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: edge ({0}, {1}) in a graph with {2} nodes")]
    EdgeOutOfRange(usize, usize, usize),

    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("optimizer state error: {0}")]
    State(String),

    #[error("simulation diverged at node {node}, time {time}: {reason}")]
    Simulation {
        node: usize,
        time: usize,
        reason: String,
    },

    #[error("ODE solve produced a non-finite state at step {step}")]
    Solve { step: usize },

    #[error("training diverged at iteration {iteration}: {reason}")]
    Training { iteration: usize, reason: String },

    #[error("malformed {what} at {path}: {reason}")]
    Format {
        what: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn format(what: &'static str, path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Format {
            what,
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}
