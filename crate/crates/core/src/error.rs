//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GogError>;

#[derive(Debug, Error)]
pub enum GogError {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    Dimension {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("annotation error: {0}")]
    Annotation(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("load error in record {record}, field `{field}`: {message}")]
    Load {
        record: String,
        field: String,
        message: String,
    },

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config digest mismatch: checkpoint has {checkpoint}, run config has {current}")]
    DigestMismatch { checkpoint: String, current: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl GogError {
    pub fn dim(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        GogError::Dimension {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        GogError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            GogError::Numerical(_) => 4,
            GogError::Config(_) | GogError::DigestMismatch { .. } => 2,
            _ => 3,
        }
    }
}
