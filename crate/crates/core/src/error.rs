use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{what}`: {reason}")]
    InvalidParam { what: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("chain {chain}: stroke {stroke} m violates {inequality}")]
    InfeasibleStroke {
        chain: usize,
        stroke: f64,
        inequality: String,
    },

    #[error("chain {chain}: singular configuration, |sin q_j2| = {value:e}")]
    Singular { chain: usize, value: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("solver failure: {0}")]
    Solver(String),
}

impl Error {
    pub fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            what: what.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
