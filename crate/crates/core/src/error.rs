use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "power iteration did not converge after {iterations} iterations \
         (estimate {estimate:e}, relative residual {residual:e})"
    )]
    NoConvergence {
        iterations: usize,
        estimate: f64,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("state overflow at time step {t}")]
    StateOverflow { t: usize },

    #[error("unstable system: spectral radius {0} is not below 1")]
    Unstable(f64),

    #[error("attack assumption violated: 1 - 2q = {margin} <= 0 (p = {p}, k = {k})")]
    AssumptionViolation { p: f64, k: usize, margin: f64 },

    #[error("weighted least-squares system is singular: {0}")]
    Singular(String),

    #[error("rank deficient Hankel: sigma_{d} = {sigma_d:e} is below the floor {floor:e}")]
    RankDeficient {
        d: usize,
        sigma_d: f64,
        floor: f64,
        singular_values: Vec<f64>,
    },

    #[error("step rule requires the true Markov matrix but no oracle is attached")]
    MissingOracle,

    #[error("window misaligned: expected last sample at time {expected}, got {got}")]
    Misaligned { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the failure is a numerical one (as opposed to bad input or
    /// configuration). The CLI maps these to different exit codes.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::StateOverflow { .. }
                | Error::Unstable(_)
                | Error::Singular(_)
                | Error::RankDeficient { .. }
        )
    }
}
