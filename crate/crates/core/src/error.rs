use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the engine. Each variant maps onto one failure class so
/// callers (the CLI in particular) can route them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed bytes in a binary file (magic, version, length).
    #[error("format error: {0}")]
    Format(String),
    /// Structurally valid input whose metadata disagrees with itself.
    #[error("schema error: {0}")]
    Schema(String),
    /// Invalid numeric content (NaN/Inf, norms).
    #[error("data error: {0}")]
    Data(String),
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("I/O error on {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad configuration rather than bad data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(contract(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}
