use std::path::PathBuf;

use crate::flag::StepTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Power iteration ran out of iterations; carries the last eigenvalue estimate.
    #[error("power iteration did not converge after {iterations} iterations (last estimate {last_estimate})")]
    Convergence {
        iterations: usize,
        last_estimate: f64,
    },

    /// A nonfinite objective value showed up; the trace up to that point is kept.
    #[error("{algorithm} diverged at iteration {iteration}")]
    Divergence {
        algorithm: &'static str,
        iteration: usize,
        trace: Box<StepTrace>,
    },

    #[error("reference optimum {reference} beaten by {excess:e} at iteration {iteration}")]
    ReferenceQuality {
        reference: f64,
        excess: f64,
        iteration: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
