//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration violated one of its structural invariants.
    #[error("invalid config: {0}")]
    Config(String),

    /// A config file could not be read or parsed.
    #[error("config parse error: {0}")]
    Parse(String),

    /// A chat conversation broke the template grammar.
    #[error("invalid conversation: {0}")]
    Chat(String),

    /// Tensor shapes or masks are inconsistent with each other.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Non-finite values where finite ones are required.
    #[error("non-finite input: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
