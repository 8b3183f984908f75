use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("training diverged at step {step} (loss {loss:e}); reduce the learning rate")]
    Diverged { step: usize, loss: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("ill-conditioned solve: {0}; try a smaller learning rate or horizon")]
    IllConditioned(String),

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("exponent iteration failed to converge; iterates {history:?}")]
    ChiOscillation { history: Vec<f64> },

    #[error("config error in {location}: {message}")]
    Config { location: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
