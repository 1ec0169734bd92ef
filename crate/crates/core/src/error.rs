use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter violates a precondition.
    #[error("invalid parameter `{name}`: {reason}")]
    Param { name: String, reason: String },

    /// A file or serialized value is malformed.
    #[error("format error in `{field}`: {reason}")]
    Format { field: String, reason: String },

    /// A metric is undefined for the given data (e.g. zero variance).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// An iterative solver broke down or produced non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Param {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn format(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
