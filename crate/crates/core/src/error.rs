use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown stereotype id {0} (expected 1..=16)")]
    UnknownStereotype(i64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown language `{0}`")]
    UnknownLanguage(String),

    #[error("language `{0}` has no usable gendered pronoun templates")]
    NoPronounTemplates(String),

    #[error("scores mix grouping keys: {0}")]
    MixedGroup(String),

    #[error("missing stereotypes: {0:?}")]
    MissingStereotypes(Vec<u8>),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("backend error: {0}")]
    Backend(#[from] crate::backends::BackendError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
