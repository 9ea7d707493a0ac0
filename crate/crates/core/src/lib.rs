//! Certified moments, bounds and Monte Carlo for the infinite occupancy scheme.
//!
//! Balls land in boxes with probabilities `p_1 ≥ p_2 ≥ …`.  The library
//! evaluates the Poissonized moment functionals exactly up to a stated
//! truncation certificate, diagnoses their large-time behaviour, samples the
//! fixed-n and Poissonized schemes exactly, and computes the normal
//! approximation and de-Poissonization bounds.

pub mod asymptotics;
pub mod depoisson;
pub mod error;
pub mod frequencies;
pub mod gaussian;
pub mod moments;
pub mod rng;
pub mod sampling;
pub mod special;

pub use error::{Error, Result};
pub use frequencies::{build_frequencies, BlockRule, FrequencySpec, FrequencyView};
pub use moments::{Certified, CovMatrix, MomentTable};
pub use sampling::{CountVector, Scheme, SimConfig, SimResult};

/// Library version, embedded in CLI outputs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
