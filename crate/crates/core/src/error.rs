//! Crate-wide error type.

use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// A configuration value is out of range or inconsistent; names the field.
    Config { field: String, message: String },
    /// Two inputs were built on different grids.
    GridMismatch {
        expected: (usize, usize),
        got: (usize, usize),
        context: &'static str,
    },
    /// An argument outside a config struct is invalid (bad factor, step out of
    /// range, empty batch, oversized window, ...).
    Invalid(String),
    /// A point-set metric was requested on an empty set.
    EmptyPointSet(&'static str),
    /// A computation produced NaN/inf or failed to converge.
    Numerical(String),
    /// I/O failure with the offending path.
    Io { path: PathBuf, source: std::io::Error },
    /// A file did not match its expected format.
    Format { path: Option<PathBuf>, message: String },
}

impl Error {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: Option<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path,
            message: message.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config { field, message } => write!(f, "config error: {field}: {message}"),
            Error::GridMismatch {
                expected,
                got,
                context,
            } => write!(
                f,
                "grid mismatch in {context}: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::Invalid(msg) => write!(f, "invalid argument: {msg}"),
            Error::EmptyPointSet(which) => {
                write!(f, "metric undefined: {which} point set is empty")
            }
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            Error::Io { path, source } => write!(f, "i/o error on {}: {source}", path.display()),
            Error::Format { path, message } => match path {
                Some(p) => write!(f, "format error in {}: {message}", p.display()),
                None => write!(f, "format error: {message}"),
            },
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
