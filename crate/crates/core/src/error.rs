use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param_err(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn domain_err(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn contract_err(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
