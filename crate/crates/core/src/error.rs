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

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("duplicate doc_id {0:?}")]
    DuplicateDocument(String),

    #[error("unknown doc_id {0:?}")]
    UnknownDocument(String),

    #[error("code {0:?} is not in the code system")]
    UnknownCode(String),

    #[error("empty code universe")]
    EmptyCodeUniverse,

    #[error("no evaluable codes")]
    NoEvaluableCodes,

    #[error("AUC undefined: {0}")]
    AucUndefined(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures that come from the numbers rather than the data
    /// (non-finite gradients, undefined statistics).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::AucUndefined(_))
    }
}
