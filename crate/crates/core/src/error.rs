use thiserror::Error;

use crate::model::GenerativeModel;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    /// Every grid candidate failed the realism gate. The candidate with the
    /// best validation likelihood is attached for inspection.
    #[error("no realistic model: best candidate has gate p-value {p_value:.4} (alpha {alpha})")]
    NoRealisticModel {
        best: Box<GenerativeModel>,
        p_value: f64,
        alpha: f64,
    },

    #[error("every row was trimmed (bounds [{low}, {high}])")]
    EmptyAfterTrim { low: f64, high: f64 },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("model format version mismatch: file has version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error("unknown estimator id `{0}`")]
    UnknownEstimator(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag for the error family.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::InvalidArgument(_) => "argument",
            Error::Training(_) => "training",
            Error::Numeric(_) => "numeric",
            Error::DegenerateScale(_) => "degenerate_scale",
            Error::NoRealisticModel { .. } => "no_realistic_model",
            Error::EmptyAfterTrim { .. } => "empty_after_trim",
            Error::Parse { .. } => "parse",
            Error::Version { .. } => "version",
            Error::Corrupt(_) => "corrupt",
            Error::UnknownEstimator(_) => "unknown_estimator",
            Error::Io(_) => "io",
        }
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn arg_err(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
