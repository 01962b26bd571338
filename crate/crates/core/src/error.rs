use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {message}")]
    Resource { path: String, message: String },

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("invalid query parameter `{field}`: {reason}")]
    InvalidQuery { field: String, reason: String },

    #[error("store corrupted in {segment} at offset {offset}: {reason}")]
    Corrupt {
        segment: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("store write failed after seq {last_durable}: {source}")]
    StoreWrite {
        last_durable: u64,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn query(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidQuery {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn resource(path: impl Into<String>, message: impl ToString) -> Self {
        Error::Resource {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
