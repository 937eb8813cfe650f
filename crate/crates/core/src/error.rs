use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("cloud has {found} points, at least {required} required")]
    TooFewPoints { found: usize, required: usize },

    #[error("degenerate cloud: all points coincide")]
    DegenerateCloud,

    #[error("requested {requested} items but only {available} are available")]
    CountExceeds { requested: usize, available: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate kernel scale: every off-diagonal distance is zero")]
    DegenerateScale,

    #[error("node {0} has zero degree")]
    ZeroDegree(usize),

    #[error("Jacobi eigen-solver did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("no eigenvalue exceeds {0:e}; graph is degenerate")]
    DegenerateSpectrum(f64),

    #[error("non-finite value produced at step {step}")]
    NonFinite { step: usize },

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("forward cache missing or stale")]
    MissingCache,

    #[error("assertion failed: {0}")]
    Assertion(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
