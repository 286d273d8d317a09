//! Sensing-limited linear-quadratic zero-sum differential games.
//!
//! Player 1 (the minimizer) can only sample the state intermittently under an
//! average sampling budget; player 2 observes the state continuously and plays
//! its saddle-point security strategy. This crate provides:
//!
//! - [`game`]: the game Riccati solution, saddle-point gains and security level;
//! - [`discretization`]: transition matrices, noise Gramians and age costs on a
//!   sensing grid;
//! - [`sensing`]: threshold policies over the age of information, the multiplier
//!   search against the budget and the randomized policy that meets it;
//! - [`simulator`]: closed-loop Monte Carlo of the state, estimator and costs;
//! - [`experiments`]: sweeps over the grid step and the budget.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod discretization;
pub mod error;
pub mod experiments;
pub mod fmt;
pub mod game;
pub mod linalg;
pub mod sensing;
pub mod simulator;

pub use discretization::{build_age_cost_table, error_covariance, noise_gramian, state_transition, AgeCostTable};
pub use error::{Error, Result};
pub use experiments::{showcase_run, sweep_budget, sweep_h, SweepOptions, SweepResult};
pub use game::{security_level, solve_game_riccati, transformed_are_residual, GameSolution, GameSpec};
pub use linalg::Matrix;
pub use sensing::{
    average_cost_of_threshold, discounted_value_iteration, lagrange_bisection, next_sensing_decision,
    relative_value_iteration, solve_threshold_equation, vanishing_discount_check, MdpConfig, PolicyMode, Redraw,
    SensorPolicy, ThresholdSolution,
};
pub use simulator::{empirical_cost_decomposition, simulate, Scheme, SimConfig, TrajectoryRecord};
