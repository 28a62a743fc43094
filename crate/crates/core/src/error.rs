use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("intensity component {index} must be strictly positive, got {value}")]
    NonPositiveIntensity { index: usize, value: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("uniform variate {0} outside [0, 1)")]
    UniformOutOfRange(f64),

    #[error("time grid must be strictly increasing and start after 0")]
    NonIncreasingGrid,

    #[error("correlation matrix is not positive definite")]
    SingularCorrelation,

    #[error("invalid reduction maps: {0}")]
    InvalidReduction(String),

    #[error("degenerate first-stage batch: payoff `{payoff}` is zero on every sample")]
    DegenerateBatch { payoff: String },

    #[error("Newton system could not be solved: Hessian not positive definite after regularization")]
    HessianSolve,

    #[error("the crude strategy has no first stage")]
    CrudeHasNoStageOne,

    #[error("second stage needs at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("quadrature truncation bound unreachable: {0}")]
    TruncationUnreachable(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what,
                expected,
                found,
            })
        }
    }
}
