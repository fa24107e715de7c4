use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("index {index} out of range for dimension {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("sample complexity undefined: {0}")]
    UndefinedSampleComplexity(String),

    /// The search hit the configured campaign-size ceiling; `trace` holds every
    /// `(n, power)` evaluated before giving up.
    #[error("campaign size ceiling {ceiling} reached before target power")]
    Ceiling { ceiling: u64, trace: Vec<(u64, f64)> },

    #[error("degenerate instance: {0}")]
    Degenerate(String),

    #[error("outside the supported privacy regime: {0}")]
    OutOfRegime(String),

    #[error("infeasible secret: {0}")]
    InfeasibleSecret(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::Dimension { expected, actual })
        }
    }
}
