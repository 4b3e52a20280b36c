use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("degenerate mask: no position is active")]
    DegenerateMask,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("training diverged: non-finite gradient in parameter {0}")]
    TrainingDivergence(String),

    #[error("input is not valid UTF-8{}", .line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Encoding { line: Option<usize> },

    #[error("id {id} is out of range for a vocabulary of size {size}")]
    InvalidId { id: usize, size: usize },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("input too short: {valid} valid positions but the window needs {window}")]
    ShortInput { valid: usize, window: usize },

    #[error("condition arity mismatch: model expects condition dimension {expected}, got {got}")]
    ConditionArity { expected: usize, got: usize },

    #[error("document {0} is missing one or more trait labels")]
    LabelMissing(usize),

    #[error("invalid seed pool: {0}")]
    SeedPool(String),

    #[error("document has no stored latent polarity vector")]
    MissingOracle,

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the caller's inputs rather than a fault in
    /// the program itself.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            Error::NonFinite(_) | Error::TrainingDivergence(_) | Error::InvalidShape(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
