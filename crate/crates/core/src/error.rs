use std::path::Path;

use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variants are grouped by cause so front ends can map them onto exit
/// codes with [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },
    #[error("training error: {0}")]
    Training(String),
    #[error("version mismatch: expected {expected}, found {found}")]
    Version { expected: u32, found: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse error classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
    Io,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Version { .. } => ErrorCategory::Config,
            Error::Data(_) | Error::Parse { .. } | Error::Range(_) => ErrorCategory::Data,
            Error::Dimension(_) | Error::Contract(_) | Error::Numeric(_) | Error::Training(_) => {
                ErrorCategory::Numeric
            }
            Error::Io(_) => ErrorCategory::Io,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}

fn at_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| at_path(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| at_path(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| at_path(path, e))
}
