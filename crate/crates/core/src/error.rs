//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("probability level `{name}` must lie strictly inside (0, 1), got {value}")]
    InvalidLevel { name: &'static str, value: f64 },

    #[error("binomial query out of range: k = {k}, n = {n}, p = {p}")]
    BinomialDomain { k: u64, n: u64, p: f64 },

    #[error(
        "constant {value} is below the exact threshold (1 + sqrt(3))^2 = {minimum}; \
         the tail guarantee would be void"
    )]
    ConstantTooSmall { value: f64, minimum: f64 },

    #[error(
        "the rule r = floor(epsilon * N / 2) yields r = 0 for epsilon = {epsilon}, \
         delta = {delta}; choose a discard rank explicitly"
    )]
    InfeasibleDiscardRank { epsilon: f64, delta: f64 },

    #[error("discard rank r = {rank} is outside 1..={count}")]
    RankOutOfRange { rank: usize, count: usize },

    #[error("{what} must not be empty")]
    Empty { what: &'static str },

    #[error("score at index {index} is not finite ({value})")]
    NonFiniteScore { index: usize, value: f64 },

    #[error("non-finite value in {what} at index {index}")]
    NonFiniteData { what: &'static str, index: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dataset holds {got} observations but the sample spec requires exactly {required}")]
    SampleCountMismatch { required: usize, got: usize },

    #[error(
        "sample spec (N = {n_samples}, r = {discard_rank}) fails the binomial validation \
         against delta split over {n_family} family member(s)"
    )]
    SpecValidationFailed {
        n_samples: usize,
        discard_rank: usize,
        n_family: usize,
    },

    #[error("scale estimate at observation {index} is not strictly positive ({value})")]
    NonPositiveScale { index: usize, value: f64 },

    #[error("linear solve failed: {context}")]
    SolveFailed { context: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
