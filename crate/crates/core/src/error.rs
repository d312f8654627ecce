use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or precondition, with the offending field path.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// The time integrator produced a non-finite value or crossed the
    /// blow-up threshold.
    #[error("divergence at t = {time} (last valid t = {last_valid}): {reason}")]
    Divergence {
        time: f64,
        last_valid: f64,
        reason: String,
    },

    #[error("singular evaluation: {0}")]
    Singular(String),

    #[error("undefined multiplier branch: {0}")]
    Undefined(String),

    #[error("optimizer aborted after {iters} iterations: {reason}")]
    Aborted { iters: usize, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape { expected, got });
    }
    Ok(())
}
