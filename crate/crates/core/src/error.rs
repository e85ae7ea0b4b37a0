use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid label {label} at line {line}")]
    InvalidLabel { line: usize, label: String },

    /// A malformed line in a dataset or embedding file.
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },

    /// Wraps a line-level error with the file it came from.
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite gradient in block {block} at element {index}")]
    NonFiniteGradient { block: usize, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("training failed: {0}")]
    Training(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::InFile {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by malformed input data rather than
    /// configuration or runtime failures.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::InvalidLabel { .. } | Error::Format { .. } | Error::Json { .. } => true,
            Error::InFile { source, .. } => source.is_data_error(),
            _ => false,
        }
    }
}
