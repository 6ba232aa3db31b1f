use thiserror::Error;

/// Errors produced by the search, modeling and persistence layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An operation was called with inputs outside its contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numeric computation produced a non-finite value.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A persisted artifact is malformed or has an incompatible version.
    #[error("malformed artifact: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
