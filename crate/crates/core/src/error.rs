use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("frequency profile is undefined at t = {t_us} us (defined on [{start_us}, {end_us}])")]
    ProfileUndefined { t_us: f64, start_us: f64, end_us: f64 },

    #[error("non-finite likelihood state at step {step}")]
    NonFinite { step: usize },

    #[error("record file {path}: {reason}")]
    MalformedRecord { path: PathBuf, reason: String },

    #[error("record file {path}: header declares {declared} samples but {found} were read")]
    LengthMismatch { path: PathBuf, declared: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("spectral band [{lo}, {hi}] MHz contains no usable bins")]
    EmptyBand { lo: f64, hi: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
