use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("unsupported encoding: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contour has no voiced frames")]
    NoVoicedFrames,

    #[error("frequency {f0:.2} Hz aliases at sample rate {sample_rate} Hz")]
    Aliasing { f0: f64, sample_rate: u32 },

    #[error("inference schedule step {step} (alpha_bar {alpha_bar:.6}) is outside the training range [{min:.6}, 1]")]
    Alignment { step: usize, alpha_bar: f64, min: f64 },

    #[error("non-finite value at {context}")]
    Numeric { context: String },

    #[error("training diverged at step {step} (t = {t}, max |param| = {max_param:e})")]
    Diverged { step: u64, t: usize, max_param: f64 },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt checkpoint container: {0}")]
    Corrupt(String),

    #[error("mode mismatch: {0}")]
    ModeMismatch(String),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
