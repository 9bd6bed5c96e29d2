use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or argument violates an operation's precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The input is well-formed but the method cannot handle it.
    #[error("unsupported input: {0}")]
    UnsupportedInput(String),

    /// A binary file did not match its expected layout.
    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

/// Early-return a parameter error unless `cond` holds.
macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Parameter(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
