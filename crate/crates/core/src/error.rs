use thiserror::Error;

use crate::net::AbortCode;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid width {0}: must be in 1..=64")]
    InvalidWidth(u32),
    #[error("share mismatch: {0}")]
    ShareMismatch(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed share file: {0}")]
    ShareFormat(String),
    #[error("triple supply exhausted")]
    TriplesExhausted,
    #[error("cube domain violation")]
    DomainViolation,
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("framing error: {0}")]
    Framing(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("session aborted (code {code:?}): {reason}")]
    Aborted { code: AbortCode, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the failure came from the peer protocol rather than local input validation.
    pub fn is_protocol(&self) -> bool {
        matches!(
            self,
            Error::Framing(_)
                | Error::Protocol(_)
                | Error::Aborted { .. }
                | Error::TriplesExhausted
                | Error::DomainViolation
                | Error::DomainMismatch(_)
                | Error::Io(_)
        )
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        Error::Csv { line, message: e.to_string() }
    }
}
