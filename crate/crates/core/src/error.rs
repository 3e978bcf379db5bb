use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value out of bounds: {0}")]
    Bounds(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("inadmissible error levels (mu={mu}, lambda={lambda}): link and non-link regions overlap")]
    Admissibility { mu: f64, lambda: f64 },

    #[error("estimate undefined: {0}")]
    UndefinedEstimate(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate mixture component: {0}")]
    DegenerateComponent(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("inconsistent input: {0}")]
    InconsistentInput(String),

    #[error("all {0} bootstrap replicates were degenerate")]
    BootstrapFailure(usize),

    #[error("scenario {id}: all {reps} replicates failed")]
    ScenarioFailure { id: u32, reps: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
