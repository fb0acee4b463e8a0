use thiserror::Error;

use crate::ufm::ModelState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric failure: {message}")]
    Numeric {
        message: String,
        /// Last state whose objective was finite, when one exists.
        last_state: Option<Box<ModelState>>,
    },

    #[error("solver failed: {message} (residual {residual:e})")]
    Solver { message: String, residual: f64 },

    #[error("degenerate solution: {0}")]
    Degenerate(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("snapshot error: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric {
            message: msg.into(),
            last_state: None,
        }
    }
}
