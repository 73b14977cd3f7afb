use thiserror::Error;

/// Errors raised by the scheduler, loss, network, optimizer and study code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("negative gap {0} passed to a scheduling function")]
    NegativeGap(f64),

    #[error("non-finite value {value} in {context}; training diverged")]
    Diverged { context: &'static str, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("value {value} outside the valid range for {context}")]
    OutOfRange { context: &'static str, value: f64 },

    #[error("statistic undefined: {0}")]
    Undefined(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(context: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Diverged { context, value })
    }
}
