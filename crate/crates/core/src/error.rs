use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-facing configuration. `field` is a dotted path when known.
    #[error("configuration error{}: {message}", field_suffix(.field))]
    Config { field: Option<String>, message: String },

    /// A dataset or archive file is missing or malformed.
    #[error("cannot ingest {}: {message}", .file.display())]
    Ingestion { file: PathBuf, message: String },

    #[error("index {index} out of range 1..={len}")]
    Bounds { index: usize, len: usize },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(String),
}

fn field_suffix(field: &Option<String>) -> String {
    match field {
        Some(f) => format!(" at `{f}`"),
        None => String::new(),
    }
}

impl Error {
    pub fn config(message: impl Into<String>) -> Self {
        Error::Config { field: None, message: message.into() }
    }

    pub fn config_at(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: Some(field.into()), message: message.into() }
    }

    pub fn ingestion(file: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Ingestion { file: file.into(), message: message.into() }
    }

    pub fn contract(message: impl Into<String>) -> Self {
        Error::Contract(message.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
