use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its documented domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Random scenario generation could not satisfy its constraints.
    #[error("scenario generation failed: {0}")]
    Generation(String),

    /// A factorization or solve failed; the message names the offending AP/UE.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An AP-side computation tried to reach state it does not own.
    #[error("locality contract violated: {0}")]
    ContractViolation(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Config(e.to_string())
    }
}
