use thiserror::Error;

/// Errors raised by the solver, discretization, policy and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no stabilizing solution: {0}")]
    NoStabilizingSolution(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("step must be positive, got {0}")]
    NonPositiveStep(f64),

    #[error("age {requested} exceeds table capacity {capacity}")]
    CapacityExceeded { requested: usize, capacity: usize },

    #[error("no threshold solution below age {0}")]
    TableExhausted(usize),

    #[error("greedy policy never senses below truncation {0}")]
    TruncationTooSmall(usize),

    #[error("greedy policy is not of threshold form: senses at {sense_at} but waits at {wait_at}")]
    NonThresholdPolicy { sense_at: usize, wait_at: usize },

    #[error("value iteration did not converge after {iterations} sweeps (last change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },

    #[error("degenerate multiplier bracket: eta_1 = eta_2 = {0} with no rate equal to the budget")]
    DegenerateBracket(usize),

    #[error("state norm {norm:e} exceeded guard {guard:e} at t = {time}")]
    Diverged { time: f64, norm: f64, guard: f64 },

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
}

impl Error {
    /// Mathematical failures, as opposed to bad input.
    pub fn is_numerical_failure(&self) -> bool {
        matches!(
            self,
            Error::NoStabilizingSolution(_)
                | Error::NonFinite(_)
                | Error::TableExhausted(_)
                | Error::TruncationTooSmall(_)
                | Error::NonThresholdPolicy { .. }
                | Error::NoConvergence { .. }
                | Error::DegenerateBracket(_)
                | Error::Diverged { .. }
                | Error::CapacityExceeded { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
