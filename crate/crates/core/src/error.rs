use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero vector: {0}")]
    ZeroVector(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dimension {n} outside supported range {min}..={max} for {what}")]
    DimensionOutOfRange {
        what: &'static str,
        n: usize,
        min: usize,
        max: usize,
    },

    #[error("vector is not in the cone closure: {0}")]
    NotInConeClosure(String),

    #[error("quantization mode mismatch: expected {expected}, got {got}")]
    ModeMismatch { expected: String, got: String },

    #[error("invalid value for {field}: {reason}")]
    InvalidValue { field: String, reason: String },

    #[error(
        "auxiliary weights hit the origin at t = {t}; restart from a perturbed initialization"
    )]
    ZeroIterate { t: usize },

    #[error("step {t} failed: {source}")]
    StepFailed {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(
        "the exact gradient of the quantized loss vanishes almost everywhere; \
         use a coarse-gradient update rule instead"
    )]
    DegenerateGradient,

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidValue {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, got })
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
