use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Each variant maps onto one of the CLI exit codes through [`ArlError::exit_code`].
#[derive(Debug, Error)]
pub enum ArlError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ArlError>;

impl ArlError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ArlError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            ArlError::Numeric(_) => 3,
            ArlError::Io { .. } => 4,
            _ => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(ArlError::Numeric("nan".into()).exit_code(), 3);
        assert_eq!(ArlError::io("x.csv", std::io::Error::from(std::io::ErrorKind::NotFound)).exit_code(), 4);
        assert_eq!(ArlError::Config("bad".into()).exit_code(), 2);
        assert_eq!(ArlError::Domain("q".into()).exit_code(), 2);
    }
}
