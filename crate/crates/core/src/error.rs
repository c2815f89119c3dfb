use thiserror::Error;

/// Errors produced by the reconstruction library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable identifier, used for machine-readable error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimMismatch(_) => "dim_mismatch",
            Error::OutOfBounds(_) => "out_of_bounds",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Degenerate(_) => "degenerate",
            Error::NonFinite(_) => "non_finite",
            Error::Solver(_) => "solver",
            Error::Format(_) => "format",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
