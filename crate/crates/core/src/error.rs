use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite height {value} at grid point ({i}, {j})")]
    NonFinite { i: usize, j: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("anisotropy evaluated at the zero vector")]
    ZeroVector,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("profile is infeasible: {0}")]
    Infeasible(String),

    #[error("minimum height {min} is below the positivity floor {floor}")]
    BelowFloor { min: f64, floor: f64 },

    #[error("elastic solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("mode has nonzero mean {0:e}")]
    NonzeroMean(f64),

    #[error("time {t} outside the interpolation range [0, {t_max}]")]
    TimeOutOfRange { t: f64, t_max: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
