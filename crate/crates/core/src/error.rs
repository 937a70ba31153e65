use numgrad::NumError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("config error: {0}")]
    Config(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("no candidate: {0}")]
    NoCandidate(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier, used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Num(NumError::Shape { .. } | NumError::Axis { .. }) => "dimension",
            Error::Num(NumError::Index { .. }) => "index",
            Error::Num(NumError::Domain { .. }) | Error::Domain(_) => "domain",
            Error::Num(NumError::Contract(_)) | Error::Contract(_) => "contract",
            Error::Num(NumError::Determinism { .. }) => "determinism",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::NoCandidate(_) => "no_candidate",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
