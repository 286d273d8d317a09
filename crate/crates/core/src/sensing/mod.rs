//! Sensor scheduling over the discrete age of information.
//!
//! The age `Δ` counts grid steps since the last sample. Action `δ = 1` samples
//! now (next age 1), `δ = 0` waits (next age `Δ + 1`); the stage cost
//! `U(Δ) + λ δ` is charged before the transition. Under a threshold `η` the
//! age cycles `1 → 2 → … → η → 1`, so the long-run Lagrangian cost is
//! `(λ + Σ_{ℓ=1}^{η} U(ℓ)) / η` and the sampling rate is `1/(η h)`.
//!
//! Note: the kernel is taken as `Δ' = 1` when sensing and `Δ' = Δ + 1`
//! otherwise. Some statements of this model write the two transition
//! probabilities the other way round; that reading makes sensing never reset
//! the age and is not used here.

mod policy;
mod threshold;
mod value_iteration;

pub use policy::{
    empirical_sensing_rate, lagrange_bisection, next_sensing_decision, PolicyMode, Redraw, SensingState, SensorPolicy,
};
pub use threshold::{average_cost_of_threshold, solve_threshold_equation, ThresholdSolution};
pub use value_iteration::{
    discounted_value_iteration, relative_value_iteration, vanishing_discount_check, AverageCostSolution,
    DiscountedSolution, VanishingPoint,
};

use crate::error::{Error, Result};

pub const DEFAULT_BETA: f64 = 0.99;
pub const DEFAULT_VI_TOL: f64 = 1e-9;
pub const DEFAULT_BISECTION_TOL: f64 = 1e-4;
pub const DEFAULT_VI_STATES: usize = 200;
pub const DEFAULT_MAX_SWEEPS: usize = 2_000_000;

/// Settings for the Lagrangian-relaxed scheduling problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpConfig {
    pub lambda: f64,
    /// Discount factor, used only by the discounted solver.
    pub beta: f64,
    /// States `1..=n_max` are kept by value iteration.
    pub n_max: usize,
    pub vi_tol: f64,
    pub bisection_tol: f64,
    pub max_sweeps: usize,
}

impl Default for MdpConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            beta: DEFAULT_BETA,
            n_max: DEFAULT_VI_STATES,
            vi_tol: DEFAULT_VI_TOL,
            bisection_tol: DEFAULT_BISECTION_TOL,
            max_sweeps: DEFAULT_MAX_SWEEPS,
        }
    }
}

impl MdpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must lie in (0, 1), got {}",
                self.beta
            )));
        }
        if !(self.vi_tol > 0.0) || !(self.bisection_tol > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        if self.n_max < 2 {
            return Err(Error::InvalidParameter(format!(
                "n_max must be >= 2, got {}",
                self.n_max
            )));
        }
        Ok(())
    }
}
