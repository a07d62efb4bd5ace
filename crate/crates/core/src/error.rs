use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, channel counts or layer chains that do not compose.
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller-supplied value outside the accepted domain.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// Range coder failures: symbols outside the alphabet, exhausted or corrupt streams.
    #[error("coding error: {0}")]
    Coding(String),
    /// Malformed files or containers.
    #[error("parse error: {0}")]
    Parse(String),
    /// Broken internal consistency (for example flags that disagree with content).
    #[error("internal invariant violated: {0}")]
    Internal(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// Short machine-readable kind tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Argument(_) => "argument",
            Error::Coding(_) => "coding",
            Error::Parse(_) => "parse",
            Error::Internal(_) => "internal",
            Error::Io(_) => "io",
        }
    }

    /// Process exit status for the CLI: 2 for data problems, 3 for invariant violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Internal(_) => 3,
            _ => 2,
        }
    }
}
