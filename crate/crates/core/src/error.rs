use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("kernel evaluated at the origin, where it is singular")]
    SingularPoint,

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("rejection sampler gave up after {attempts} attempts")]
    SamplerExhausted { attempts: usize },

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
