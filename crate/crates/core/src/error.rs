use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("invalid decision: {0}")]
    InvalidDecision(String),

    #[error("loss {value} outside [0, 1] ({what})")]
    LossOutOfRange { value: f64, what: &'static str },

    #[error("unknown outcome symbol `{0}`")]
    UnknownOutcome(String),

    #[error("invalid expert weights: {0}")]
    InvalidWeights(String),

    #[error("quantile level {eps} outside (0, {total}]")]
    InvalidQuantile { eps: f64, total: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operation requires {expected} mode")]
    WrongMode { expected: &'static str },

    #[error(
        "no feasible decision found: best worst-case log potential {best_log} exceeds ceiling {ceiling_log} after {iterations} iterations"
    )]
    Infeasible {
        best_log: f64,
        ceiling_log: f64,
        iterations: usize,
    },

    #[error("exact vertex enumeration requested for N = {n} > exact_cap = {cap}")]
    ExactCapExceeded { n: usize, cap: usize },

    #[error("levin search found no point within tolerance (best slack {best_slack})")]
    LevinNotFound { best_slack: f64 },

    #[error("grid mismatch between run and check")]
    GridMismatch,

    #[error("no crossover in search range: {0}")]
    NoCrossover(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
