use thiserror::Error;

/// Errors raised by the numerical core.
///
/// The variants map onto the CLI exit-code classes: `Validation`, `Config`
/// and `NoPeriodicity` are caller mistakes (exit 2), everything else is a
/// runtime failure (exit 1).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The spectrum carries no energy outside DC, so no period can be extracted.
    #[error("no periodicity: {0}")]
    NoPeriodicity(String),

    #[error("runtime error: {0}")]
    Runtime(String),

    /// An API was used out of order, e.g. a backward pass with a stale cache.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by bad input or configuration.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_) | Error::Config(_) | Error::NoPeriodicity(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
