use thiserror::Error;

/// Top-level error type; variants map onto CLI exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("data/KB conflict: {0}")]
    DataConflict(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Parse(_) | Error::Io(_) => 1,
            Error::DataConflict(_) => 2,
            Error::Solver(_) => 3,
        }
    }
}

impl From<foprl_core::parse::ParseError> for Error {
    fn from(e: foprl_core::parse::ParseError) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
