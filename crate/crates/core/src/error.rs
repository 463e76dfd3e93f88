use std::path::PathBuf;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension error: {op} cannot combine shapes {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("validation error for example `{id}`: {message}")]
    Validation { id: String, message: String },

    #[error("duplicate ids across train and test: {0:?}")]
    DuplicateIds(Vec<String>),

    #[error("adapter refused: {message}\n  adapter: {adapter}\n  target:  {target}")]
    AdapterMismatch {
        message: String,
        adapter: String,
        target: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("container format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
