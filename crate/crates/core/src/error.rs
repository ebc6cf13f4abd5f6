use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("transition row P[{state}][{action}] is not a probability distribution")]
    NonStochasticRow { state: usize, action: usize },
    #[error("initial state distribution is not a probability distribution")]
    BadInitialDistribution,
    #[error("continuation probability gamma = {0} is outside (0, 1)")]
    GammaOutOfRange(f64),
    #[error("policy row {state} is not a probability distribution")]
    NonStochasticPolicy { state: usize },
    #[error("occupancy table is not a probability distribution")]
    BadOccupancy,
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("occupancy flow system is singular")]
    SingularSystem,
    #[error("no convergence within {max_iters} iterations")]
    NoConvergence { max_iters: usize },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("divergence undefined: p > 0 and q = 0 at ({state}, {action})")]
    SupportViolation { state: usize, action: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("optimization diverged at step {step}")]
    Diverged { step: usize },
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("index out of bounds: {0}")]
    IndexOutOfBounds(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl ToString, found: impl ToString) -> Error {
    Error::ShapeMismatch {
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
