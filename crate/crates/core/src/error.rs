//! Crate-wide error type.

use crate::quantile::QuantileTable;
use thiserror::Error;

/// Errors produced by construction, validation, and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument was outside its mathematical domain (e.g. a quantile
    /// level outside (0,1), a non-positive tolerance).
    #[error("domain error: {0}")]
    Domain(String),

    /// A structural invariant failed (probabilities not summing to one,
    /// shape mismatches, out-of-range indices).
    #[error("validation error: {0}")]
    Validation(String),

    /// The operation requires a finite-support reward model but a
    /// continuous one was supplied, or vice versa.
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    /// An iterative solver hit its iteration cap. Carries the last iterate
    /// so callers can inspect or resume.
    #[error("no convergence within {iters} iterations")]
    NonConvergence {
        iters: usize,
        last: Box<QuantileTable>,
    },

    /// A numeric subroutine failed (e.g. root bracketing did not straddle
    /// the target level within the expansion budget).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Experiment configuration could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
