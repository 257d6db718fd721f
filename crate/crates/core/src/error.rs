use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("stability threshold undefined: sigma - beta - 1 = 0 (beta={beta}, sigma={sigma})")]
    DegenerateThreshold { beta: f64, sigma: f64 },

    #[error("integrator step size underflow at t={t} (h={h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("unsupported observation density {0} (must divide 40)")]
    UnsupportedDensity(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite after jitter ladder (max jitter {max_jitter:e})")]
    NotPositiveDefinite { max_jitter: f64 },

    #[error("hyperparameter fit failed for every start: {0}")]
    FitFailed(String),

    #[error("non-finite state encountered during leapfrog integration")]
    NonFiniteState,

    #[error("pilot window of length {t_pilot} holds {found} observations per component, need at least 3")]
    PilotTooShort { t_pilot: f64, found: usize },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("solver failed: {0}")]
    Solver(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
