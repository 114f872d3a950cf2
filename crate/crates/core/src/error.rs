use std::io;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),

    #[error("unknown document id `{0}`")]
    UnknownDocument(String),

    #[error("document `{doc_id}`: {msg}")]
    Data { doc_id: String, msg: String },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported file format: {0}")]
    Format(String),

    #[error(
        "training diverged at epoch {epoch}, batch {batch} (loss {loss}); parameter norms: {norms}"
    )]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
        norms: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}

pub(crate) fn arg_err(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}
