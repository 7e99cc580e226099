use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("grid mismatch: {0}")]
    SpecMismatch(String),
    #[error("field contains non-finite values")]
    NonFinite,
    #[error("{what} did not converge: {diagnostics}")]
    NotConverged { what: &'static str, diagnostics: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("emin table does not cover the requested masses: {0}")]
    TableGap(String),
    #[error("feasible region is empty: {0}")]
    EmptyRegion(String),
    #[error("window overflow: {0}")]
    WindowOverflow(String),
    #[error("cache miss: {0}")]
    CacheMiss(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
