use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the calibration, pose and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A model parameterization violates its invariants.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// An operation was requested in the wrong lifecycle state.
    #[error("state error: {0}")]
    State(String),

    /// Not enough data has been collected yet.
    #[error("not ready: {0}")]
    NotReady(String),

    /// The data cannot constrain the requested quantity.
    #[error("unobservable: {0}")]
    Unobservable(String),

    /// Input data is inconsistent or incomplete.
    #[error("data error: {0}")]
    Data(String),

    /// Frames were delivered out of order.
    #[error("sequence error: {0}")]
    Sequence(String),

    /// A text file could not be parsed.
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A well-formed line carries an invalid value.
    #[error("{}:{line}: invalid value: {message}", path.display())]
    InvalidValue {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A binary or structured file has the wrong layout.
    #[error("format error in {}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    /// No residual survived the visibility checks.
    #[error("empty residual: {0}")]
    EmptyResidual(String),

    /// Neither energy term has any residual.
    #[error("undefined energy: {0}")]
    UndefinedEnergy(String),

    /// Trajectory alignment is ill-posed.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::InvalidValue {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
