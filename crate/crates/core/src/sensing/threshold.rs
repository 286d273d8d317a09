use std::borrow::Cow;

use crate::discretization::AgeCostTable;
use crate::error::{Error, Result};

const THETA_BISECTION_STEPS: usize = 80;

/// Average-cost optimal threshold for a fixed multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSolution {
    pub eta_bar: usize,
    /// Fractional root in `[0, 1]`.
    pub theta: f64,
    /// Average Lagrangian cost `U(η̄ + θ)`.
    pub v_bar: f64,
    pub lambda: f64,
    /// `|U(η̄+θ)·η̄ − Σ_{ℓ≤η̄} U(ℓ) − λ|`
    pub residual: f64,
}

/// Long-run Lagrangian cost of the deterministic threshold `eta`:
/// `(λ + Σ_{ℓ=1}^{η} U(ℓ)) / η`.
pub fn average_cost_of_threshold(table: &AgeCostTable, eta: usize, lambda: f64) -> Result<f64> {
    if eta == 0 {
        return Err(Error::InvalidParameter("threshold must be >= 1".into()));
    }
    let sum: f64 = table
        .values()
        .get(1..=eta)
        .ok_or(Error::CapacityExceeded {
            requested: eta,
            capacity: table.n_max(),
        })?
        .iter()
        .sum();
    Ok((lambda + sum) / eta as f64)
}

/// Solves `U(η̄ + θ)·η̄ = Σ_{ℓ=1}^{η̄} U(ℓ) + λ` for the integer threshold `η̄`
/// and fractional part `θ ∈ [0, 1]`.
///
/// `η̄` is the first integer at which the right-hand side divided by `η̄`
/// falls inside `[U(η̄), U(η̄+1)]`; `θ` is then found by bisection on the
/// continuous age cost. The table is extended (on a private copy) when the
/// scan runs past its capacity.
pub fn solve_threshold_equation(table: &AgeCostTable, lambda: f64) -> Result<ThresholdSolution> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    let mut table = Cow::Borrowed(table);
    let mut prefix = 0.0;
    let mut eta = 1usize;
    let (eta_bar, target) = loop {
        if eta + 1 > table.n_max() && table.to_mut().ensure(eta + 1).is_err() {
            return Err(Error::TableExhausted(table.n_max()));
        }
        let u = table.values();
        prefix += u[eta];
        let target = (prefix + lambda) / eta as f64;
        if u[eta + 1] >= target {
            break (eta, target);
        }
        eta += 1;
    };

    let lo_val = table.u_continuous(eta_bar as f64)?;
    let hi_val = table.u_continuous(eta_bar as f64 + 1.0)?;
    let theta = if lo_val >= target {
        0.0
    } else if hi_val <= target {
        1.0
    } else {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..THETA_BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if table.u_continuous(eta_bar as f64 + mid)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let v_bar = table.u_continuous(eta_bar as f64 + theta)?;
    let residual = (v_bar * eta_bar as f64 - prefix - lambda).abs();
    Ok(ThresholdSolution {
        eta_bar,
        theta,
        v_bar,
        lambda,
        residual,
    })
}
