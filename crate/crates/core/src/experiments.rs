//! Cost sweeps over the sensing grid and the budget, and the single-trajectory
//! showcase run.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::discretization::{build_age_cost_table, default_capacity, error_covariance};
use crate::error::{Error, Result};
use crate::fmt::num;
use crate::game::{solve_game_riccati, GameSolution, GameSpec, DEFAULT_NEWTON_ITERS, DEFAULT_RICCATI_TOL};
use crate::linalg::to_rows;
use crate::sensing::{lagrange_bisection, SensorPolicy, DEFAULT_BISECTION_TOL};
use crate::simulator::{predicted_error_cost, simulate, Scheme, SimConfig, TrajectoryRecord, DEFAULT_DIVERGENCE_GUARD};

pub const DEFAULT_SEEDS: usize = 20;
pub const DEFAULT_HORIZON: f64 = 5000.0;
const MIN_DT: f64 = 1e-3;
const DT_DIVISOR: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOptions {
    pub seeds: usize,
    pub horizon: f64,
    pub base_seed: u64,
    /// Integration step; `None` picks `h/10`, floored at `1e-3` while still dividing `h`.
    pub dt: Option<f64>,
    pub scheme: Scheme,
    pub bisection_eps: f64,
    /// Divergence guard; `None` scales the default by the error spread of the
    /// longest threshold in the sweep.
    pub divergence_guard: Option<f64>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            seeds: DEFAULT_SEEDS,
            horizon: DEFAULT_HORIZON,
            base_seed: 0,
            dt: None,
            scheme: Scheme::default(),
            bisection_eps: DEFAULT_BISECTION_TOL,
            divergence_guard: None,
        }
    }
}

/// `h/k` with the largest `k ≤ 10` keeping the step at least `1e-3`.
pub fn default_dt(h: f64) -> f64 {
    let k = ((h / MIN_DT) * (1.0 + 1e-9)).floor().clamp(1.0, DT_DIVISOR as f64);
    h / k
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub b: f64,
    pub h: f64,
    pub dt: f64,
    pub policy: SensorPolicy,
    pub mean_cost: f64,
    pub stderr: f64,
    pub mean_error_cost: f64,
    pub error_stderr: f64,
    /// Renewal-reward error cost of the policy.
    pub predicted_error_cost: f64,
    pub costs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub axis_name: String,
    pub axis_values: Vec<f64>,
    pub mean_cost: Vec<f64>,
    pub stderr: Vec<f64>,
    pub seeds_per_point: usize,
    pub j_star: f64,
    pub points: Vec<SweepPoint>,
    /// JSON echo of everything needed to repeat the sweep.
    pub manifest: String,
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "axis_value,mean_cost,stderr,n_seeds,J_star")?;
        for i in 0..self.axis_values.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                num(self.axis_values[i]),
                num(self.mean_cost[i]),
                num(self.stderr[i]),
                self.seeds_per_point,
                num(self.j_star)
            )?;
        }
        Ok(())
    }
}

/// Sample mean and standard error, summed in index order.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn validate_opts(opts: &SweepOptions) -> Result<()> {
    if opts.seeds == 0 {
        return Err(Error::InvalidParameter(
            "at least one seed per point is required".into(),
        ));
    }
    if !(opts.horizon > 0.0 && opts.horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "horizon must be positive, got {}",
            opts.horizon
        )));
    }
    Ok(())
}

fn policy_for(spec: &GameSpec, sol: &GameSolution, b: f64, h: f64, eps: f64) -> Result<SensorPolicy> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidParameter(format!("budget must be positive, got {b}")));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::NonPositiveStep(h));
    }
    let table = build_age_cost_table(sol, &spec.g, h, default_capacity(b, h))?;
    match lagrange_bisection(&table, b, h, eps) {
        // Without process noise every schedule costs nothing; sense at the
        // slowest grid rate the budget allows.
        Err(Error::TableExhausted(_)) if table.values().iter().all(|&u| u == 0.0) => {
            let eta = (1.0 / (b * h) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            let mut policy = SensorPolicy::deterministic(eta, h);
            policy.b = b;
            Ok(policy)
        }
        other => other,
    }
}

/// Guard scaled by the standard deviation of the estimation error at the
/// longest age the policy can reach.
fn adaptive_guard(sol: &GameSolution, spec: &GameSpec, policy: &SensorPolicy) -> Result<f64> {
    let age = policy.max_threshold() as f64 * policy.h;
    let spread = error_covariance(&sol.a_tilde, &spec.g, age)?.trace().max(0.0).sqrt();
    Ok(DEFAULT_DIVERGENCE_GUARD * spread.max(1.0))
}

fn run_point(
    spec: &GameSpec,
    sol: &GameSolution,
    axis_value: f64,
    b: f64,
    h: f64,
    opts: &SweepOptions,
) -> Result<SweepPoint> {
    let policy = policy_for(spec, sol, b, h, opts.bisection_eps)?;
    let dt = opts.dt.unwrap_or_else(|| default_dt(h));
    let guard = match opts.divergence_guard {
        Some(g) => g,
        None => adaptive_guard(sol, spec, &policy)?,
    };
    let runs: Vec<TrajectoryRecord> = (0..opts.seeds)
        .into_par_iter()
        .map(|i| {
            let mut cfg = SimConfig::new(policy.clone(), opts.horizon, dt, opts.base_seed.wrapping_add(i as u64));
            cfg.scheme = opts.scheme;
            cfg.divergence_guard = guard;
            simulate(spec, sol, &cfg)
        })
        .collect::<Result<_>>()?;
    let costs: Vec<f64> = runs.iter().map(|r| r.j_empirical).collect();
    let errors: Vec<f64> = runs.iter().map(|r| r.error_cost_empirical).collect();
    let (mean_cost, stderr) = mean_and_stderr(&costs);
    let (mean_error_cost, error_stderr) = mean_and_stderr(&errors);
    let predicted_error_cost = predicted_error_cost(sol, &spec.g, &policy)?;
    Ok(SweepPoint {
        axis_value,
        b,
        h,
        dt,
        policy,
        mean_cost,
        stderr,
        mean_error_cost,
        error_stderr,
        predicted_error_cost,
        costs,
    })
}

fn spec_json(spec: &GameSpec) -> serde_json::Value {
    json!({
        "A": to_rows(&spec.a),
        "B1": to_rows(&spec.b1),
        "B2": to_rows(&spec.b2),
        "G": to_rows(&spec.g),
        "Q": to_rows(&spec.q),
        "R1": to_rows(&spec.r1),
        "R2": to_rows(&spec.r2),
        "Sigma0": to_rows(&spec.sigma0),
    })
}

fn sweep(
    spec: &GameSpec,
    axis: &str,
    values: &[f64],
    fixed: (&str, f64),
    opts: &SweepOptions,
    point: impl Fn(f64) -> (f64, f64) + Sync,
) -> Result<SweepResult> {
    spec.validate()?;
    validate_opts(opts)?;
    if values.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one axis value".into()));
    }
    let sol = solve_game_riccati(spec, DEFAULT_RICCATI_TOL, DEFAULT_NEWTON_ITERS)?;
    let points: Vec<SweepPoint> = values
        .par_iter()
        .map(|&v| {
            let (b, h) = point(v);
            run_point(spec, &sol, v, b, h, opts)
        })
        .collect::<Result<_>>()?;

    let manifest = json!({
        "axis": axis,
        "axis_values": values,
        fixed.0: fixed.1,
        "game": spec_json(spec),
        "options": opts,
        "dt": points.iter().map(|p| p.dt).collect::<Vec<_>>(),
        "J_star": sol.j_star,
    });
    Ok(SweepResult {
        axis_name: axis.to_string(),
        axis_values: values.to_vec(),
        mean_cost: points.iter().map(|p| p.mean_cost).collect(),
        stderr: points.iter().map(|p| p.stderr).collect(),
        seeds_per_point: opts.seeds,
        j_star: sol.j_star,
        points,
        manifest: serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    })
}

/// Mean closed-loop cost against the sensing step `h` at a fixed budget.
pub fn sweep_h(spec: &GameSpec, b: f64, h_values: &[f64], opts: &SweepOptions) -> Result<SweepResult> {
    sweep(spec, "h", h_values, ("b", b), opts, |h| (b, h))
}

/// Mean closed-loop cost against the budget `b` at a fixed sensing step.
pub fn sweep_budget(spec: &GameSpec, h: f64, b_values: &[f64], opts: &SweepOptions) -> Result<SweepResult> {
    sweep(spec, "b", b_values, ("h", h), opts, |b| (b, h))
}

/// One fully recorded run with the budget-optimal policy.
pub fn showcase_run(
    spec: &GameSpec,
    b: f64,
    h: f64,
    horizon: f64,
    seed: u64,
    record_stride: usize,
) -> Result<(GameSolution, SensorPolicy, TrajectoryRecord)> {
    spec.validate()?;
    let sol = solve_game_riccati(spec, DEFAULT_RICCATI_TOL, DEFAULT_NEWTON_ITERS)?;
    let policy = policy_for(spec, &sol, b, h, DEFAULT_BISECTION_TOL)?;
    let mut cfg = SimConfig::new(policy.clone(), horizon, default_dt(h), seed);
    cfg.record_stride = record_stride.max(1);
    cfg.divergence_guard = adaptive_guard(&sol, spec, &policy)?;
    let rec = simulate(spec, &sol, &cfg)?;
    Ok((sol, policy, rec))
}
