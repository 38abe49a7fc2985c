use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("no convergence after {iterations} iterations: {detail}")]
    NonConvergence { iterations: usize, detail: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("agent {agent} did not answer within {timeout:?}")]
    Timeout { agent: usize, timeout: Duration },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("{analysis} analysis: {source}")]
    Analysis { analysis: String, source: Box<Error> },

    #[error("scenario field `{path}`: {detail}")]
    Schema { path: String, detail: String },
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

/// Why a wire line was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseReason {
    Empty,
    Malformed,
    UnknownKind,
    MalformedNumber,
    DimensionMismatch,
    MissingField,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse error at byte {offset}: {reason:?} ({detail})")]
pub struct ParseError {
    pub offset: usize,
    pub reason: ParseReason,
    pub detail: String,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
