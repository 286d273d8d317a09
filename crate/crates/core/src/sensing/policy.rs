use rand::Rng;
use serde::{Deserialize, Serialize};

use super::threshold::solve_threshold_equation;
use crate::discretization::AgeCostTable;
use crate::error::{Error, Result};

/// Relative slack used when comparing a realized rate with the budget.
const RATE_MATCH_RTOL: f64 = 1e-12;
const MAX_WINDOW_SHIFTS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    Deterministic,
    Randomized,
}

/// When the randomized threshold is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Redraw {
    /// A single draw when the policy is activated.
    #[default]
    Once,
    /// A fresh draw after every sensing event.
    PerCycle,
}

/// Randomized threshold sensing policy meeting the budget with equality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorPolicy {
    pub lambda_star: f64,
    pub eta_1: usize,
    pub eta_2: usize,
    /// Probability of using `eta_1`.
    pub vartheta: f64,
    pub b_1: f64,
    pub b_2: f64,
    /// Average Lagrangian cost at `lambda_star`; absent for hand-built policies.
    #[serde(rename = "V_bar")]
    pub v_bar: Option<f64>,
    pub mode: PolicyMode,
    pub redraw: Redraw,
    pub b: f64,
    pub h: f64,
    pub lambda_1: f64,
    pub lambda_2: f64,
}

impl SensorPolicy {
    /// Always sense once the age reaches `eta`.
    pub fn deterministic(eta: usize, h: f64) -> Self {
        let rate = 1.0 / (eta as f64 * h);
        Self {
            lambda_star: 0.0,
            eta_1: eta,
            eta_2: eta,
            vartheta: 1.0,
            b_1: rate,
            b_2: rate,
            v_bar: None,
            mode: PolicyMode::Deterministic,
            redraw: Redraw::Once,
            b: rate,
            h,
            lambda_1: 0.0,
            lambda_2: 0.0,
        }
    }

    pub fn with_redraw(mut self, redraw: Redraw) -> Self {
        self.redraw = redraw;
        self
    }

    /// Expected long-run rate when the threshold is drawn once:
    /// `ϑ/(η₁h) + (1−ϑ)/(η₂h)`.
    pub fn expected_rate(&self) -> f64 {
        self.vartheta * self.b_1 + (1.0 - self.vartheta) * self.b_2
    }

    /// Long-run rate when the threshold is redrawn every cycle:
    /// `1/((ϑη₁ + (1−ϑ)η₂) h)`.
    pub fn per_cycle_rate(&self) -> f64 {
        let mean_eta = self.vartheta * self.eta_1 as f64 + (1.0 - self.vartheta) * self.eta_2 as f64;
        1.0 / (mean_eta * self.h)
    }

    pub fn max_threshold(&self) -> usize {
        self.eta_1.max(self.eta_2)
    }
}

fn rates_match(rate: f64, b: f64) -> bool {
    (rate - b).abs() <= RATE_MATCH_RTOL * b
}

/// Lagrange multiplier search against the sensing budget `b`.
///
/// A bracket `[λ₁, λ₂]` is accepted when `1/η̄(λ₂) ≤ b h ≤ 1/η̄(λ₁)`. The
/// search starts from `[0, 1]`; while the upper end is still infeasible the
/// window moves up and doubles in width, then bisection shrinks it until its
/// width is below `eps·max(1, λ₂)`. The two thresholds are mixed with
/// probability `ϑ = (b − b₂)/(b₁ − b₂)` so that the expected rate is exactly `b`.
pub fn lagrange_bisection(table: &AgeCostTable, b: f64, h: f64, eps: f64) -> Result<SensorPolicy> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidParameter(format!("budget must be positive, got {b}")));
    }
    if !(h > 0.0) {
        return Err(Error::NonPositiveStep(h));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bisection tolerance must be positive, got {eps}"
        )));
    }
    if (table.h - h).abs() > 1e-12 * h {
        return Err(Error::ConfigMismatch(format!(
            "table built for h = {}, policy requested for h = {h}",
            table.h
        )));
    }

    let target = b * h;
    let eta_at = |lambda: f64| solve_threshold_equation(table, lambda);
    let rate_of = |eta: usize| 1.0 / (eta as f64 * h);
    let feasible = |eta: usize| rate_of(eta) <= b || rates_match(rate_of(eta), b);
    let exact = |sol: &super::ThresholdSolution, lo: f64, hi: f64| {
        let mut p = SensorPolicy::deterministic(sol.eta_bar, h);
        p.lambda_star = sol.lambda;
        p.v_bar = Some(sol.v_bar);
        p.b = b;
        p.lambda_1 = lo;
        p.lambda_2 = hi;
        p
    };

    let free = eta_at(0.0)?;
    if feasible(free.eta_bar) {
        return Ok(exact(&free, 0.0, 0.0));
    }

    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut upper = eta_at(hi)?;
    let mut shifts = 0;
    while !feasible(upper.eta_bar) {
        let width = hi - lo;
        lo = hi;
        hi += 2.0 * width;
        upper = eta_at(hi)?;
        shifts += 1;
        if shifts > MAX_WINDOW_SHIFTS || !hi.is_finite() {
            return Err(Error::TableExhausted(table.n_max()));
        }
    }
    if rates_match(rate_of(upper.eta_bar), b) {
        return Ok(exact(&upper, lo, hi));
    }

    while hi - lo > eps * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let sol = eta_at(mid)?;
        if rates_match(rate_of(sol.eta_bar), b) {
            return Ok(exact(&sol, lo, hi));
        }
        if feasible(sol.eta_bar) {
            hi = mid;
            upper = sol;
        } else {
            lo = mid;
        }
    }

    let eta_1 = eta_at(lo)?.eta_bar;
    let eta_2 = upper.eta_bar;
    if eta_1 == eta_2 {
        return Err(Error::DegenerateBracket(eta_1));
    }
    let b_1 = rate_of(eta_1);
    let b_2 = rate_of(eta_2);
    debug_assert!(1.0 / eta_2 as f64 <= target * (1.0 + RATE_MATCH_RTOL));
    let vartheta = ((b - b_2) / (b_1 - b_2)).clamp(0.0, 1.0);
    let lambda_star = 0.5 * (lo + hi);
    let v_bar = eta_at(lambda_star)?.v_bar;
    Ok(SensorPolicy {
        lambda_star,
        eta_1,
        eta_2,
        vartheta,
        b_1,
        b_2,
        v_bar: Some(v_bar),
        mode: PolicyMode::Randomized,
        redraw: Redraw::Once,
        b,
        h,
        lambda_1: lo,
        lambda_2: hi,
    })
}

/// Per-run sensing state: the threshold currently in force.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensingState {
    pub active_threshold: usize,
}

impl SensingState {
    /// Activates the policy, drawing the initial threshold.
    pub fn activate<R: Rng + ?Sized>(policy: &SensorPolicy, rng: &mut R) -> Self {
        Self {
            active_threshold: draw_threshold(policy, rng),
        }
    }
}

fn draw_threshold<R: Rng + ?Sized>(policy: &SensorPolicy, rng: &mut R) -> usize {
    match policy.mode {
        PolicyMode::Deterministic => policy.eta_1,
        PolicyMode::Randomized => {
            if rng.random::<f64>() < policy.vartheta {
                policy.eta_1
            } else {
                policy.eta_2
            }
        }
    }
}

/// Sensing decision at discrete age `age ≥ 1`.
pub fn next_sensing_decision<R: Rng + ?Sized>(
    policy: &SensorPolicy,
    state: &mut SensingState,
    age: usize,
    rng: &mut R,
) -> bool {
    let sense = age >= state.active_threshold;
    if sense && policy.redraw == Redraw::PerCycle {
        state.active_threshold = draw_threshold(policy, rng);
    }
    sense
}

/// Runs the age chain for `steps` grid steps (the policy is activated with a
/// sample at step 0) and returns the sampling frequency per step.
pub fn empirical_sensing_rate<R: Rng + ?Sized>(policy: &SensorPolicy, steps: usize, rng: &mut R) -> f64 {
    let mut state = SensingState::activate(policy, rng);
    let mut age = 0usize;
    let mut count = 0usize;
    for _ in 0..steps {
        age += 1;
        if next_sensing_decision(policy, &mut state, age, rng) {
            count += 1;
            age = 0;
        }
    }
    count as f64 / steps as f64
}
