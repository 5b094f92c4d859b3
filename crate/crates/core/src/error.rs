use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's documented precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Invalid model or filter configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A factorization failed or every particle weight vanished.
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
