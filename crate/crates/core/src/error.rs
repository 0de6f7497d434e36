use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violates the mathematical domain of an operation
    /// (non-definite precision, non-positive variance, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numerically singular system (1-norm condition estimate {cond:.3e})")]
    Singular { cond: f64 },

    #[error("invalid iteration state: {0}")]
    State(String),

    #[error("diverged after {iterations} iterations: {reason}")]
    Divergence {
        iterations: usize,
        reason: String,
        trace: Vec<f64>,
    },

    #[error("{what} index {index} out of range 1..={max}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        max: usize,
    },

    #[error("dense assembly of {entries} complex entries exceeds the cap of {cap}")]
    TooLarge { entries: usize, cap: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what,
            expected,
            got,
        }
    }
}
