use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit-code categories:
/// `Config` → 2, `Shape`/`Data`/`Io` → 3, `Numeric` → 4.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or image dimensions do not fit the operation.
    #[error("shape: {0}")]
    Shape(String),
    /// Malformed or inconsistent configuration.
    #[error("config: {0}")]
    Config(String),
    /// Missing or malformed input data.
    #[error("data: {0}")]
    Data(String),
    /// Numerical failure (non-finite values, failed factorization).
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
