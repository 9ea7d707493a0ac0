use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("tolerance {requested:e} not reached after {terms} terms (achieved {achieved:e})")]
    ToleranceNotMet {
        requested: f64,
        achieved: f64,
        terms: u64,
        value: f64,
    },

    #[error("degenerate variance for r = {r} (V = {value:e})")]
    DegenerateVariance { r: u32, value: f64 },

    #[error("result overflows double precision")]
    Overflow,

    #[error("subprobability frequencies cannot be used with a fixed number of balls")]
    Subprobability,

    #[error("grid too short: {got} points, need at least {need}")]
    GridTooShort { got: usize, need: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("finite support exhausted at index {0}")]
    SupportExhausted(u64),

    #[error("internal consistency check failed: {0}")]
    Inconsistent(String),

    #[error("no moments available at size {0}")]
    MissingMoments(f64),

    #[error("sampling workload too large: {0}")]
    Workload(String),
}

pub type Result<T> = std::result::Result<T, Error>;
