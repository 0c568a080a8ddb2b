use std::path::PathBuf;

use thiserror::Error;

use crate::gsa::TraceEntry;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (shapes, ranges, counts).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("matrix is not positive definite (pivot {pivot} is not positive)")]
    NotPositiveDefinite { pivot: usize },

    #[error("residual of node {node} has zero energy; precision entry is undefined")]
    DegenerateResidual { node: usize },

    /// `recent` holds the last steps taken before the search was stopped.
    #[error("stepwise search revisited an earlier edge set at iteration {iteration}")]
    CycleDetected {
        iteration: usize,
        recent: Vec<TraceEntry>,
    },

    #[error("stepwise search did not stop within {max_iter} iterations")]
    IterationLimit {
        max_iter: usize,
        recent: Vec<TraceEntry>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Last steps of a stopped search, if any.
    pub fn recent_steps(&self) -> &[TraceEntry] {
        match self {
            Error::CycleDetected { recent, .. } | Error::IterationLimit { recent, .. } => recent,
            _ => &[],
        }
    }

    /// True for failures of the numerical procedure itself rather than of
    /// its inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::DegenerateResidual { .. }
                | Error::CycleDetected { .. }
                | Error::IterationLimit { .. }
        )
    }
}
