use thiserror::Error;

/// Failure modes shared by every routine in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid market: {0}")]
    InvalidMarket(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("outside domain: {0}")]
    Domain(String),
    #[error("numerical failure: {message} (residual {residual:e})")]
    Numeric { message: String, residual: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn numeric(message: impl Into<String>, residual: f64) -> Self {
        Error::Numeric { message: message.into(), residual }
    }

    /// Process exit code used by the command line front end.
    ///
    /// 1 is reserved for input that cannot be parsed at all.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } => 3,
            _ => 2,
        }
    }
}
