//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("tensor not found: {0}")]
    NotFound(String),

    #[error("image format error: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid Renyi order alpha={0}: require alpha > 0 and alpha != 1")]
    InvalidOrder(f64),

    #[error("degenerate attention distribution at block {block:?}, head {head}, query patch {patch}: restricted row mass < 1e-12")]
    DegenerateDistribution {
        block: Option<usize>,
        head: usize,
        patch: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable tag, used by the HTTP layer.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Parse(_) => "parse",
            Error::Integrity(_) => "integrity",
            Error::NotFound(_) => "not_found",
            Error::Format(_) => "format",
            Error::Config(_) => "config",
            Error::InvalidOrder(_) => "invalid_order",
            Error::DegenerateDistribution { .. } => "degenerate_distribution",
            Error::EmptyInput(_) => "empty_input",
            Error::NonFinite(_) => "non_finite",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
