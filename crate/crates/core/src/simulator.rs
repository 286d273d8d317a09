//! Closed-loop Monte Carlo of the sensing-limited game.
//!
//! The joint state `z = [x; x̂]` is linear between samples:
//!
//! ```text
//! dx = (Ã x − B1 K1 x̂) dt + G dW      (u1 = −K1 x̂, u2 = K2 x)
//! dx̂ = (Ã − B1 K1) x̂ dt
//! ```
//!
//! and `x̂ ← x` at every sensing instant on the `h` grid. Two steppers are
//! available on the integration grid `dt`: the exact Gaussian transition of the
//! linear SDE (default) and Euler–Maruyama. Running costs are averaged with
//! the trapezoid rule over each `dt` step, using the pre-reset state at the
//! right end of a step that ends in a sample.

use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::discretization::{error_covariance, noise_gramian, state_transition};
use crate::error::{Error, Result};
use crate::fmt::num;
use crate::game::{GameSolution, GameSpec};
use crate::linalg::{psd_factor, Matrix};
use crate::sensing::{next_sensing_decision, SensingState, SensorPolicy};

pub const DEFAULT_DIVERGENCE_GUARD: f64 = 1e6;
const SENSOR_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Exact transition `z ← e^{F dt} z + w`, `w ~ N(0, ∫₀^dt e^{Fs} GGᵀ e^{Fᵀs} ds)`.
    #[default]
    Exact,
    /// `z ← (I + F dt) z + G √dt ξ`.
    EulerMaruyama,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    pub h: f64,
    pub seed: u64,
    pub policy: SensorPolicy,
    /// Keep every `record_stride`-th step (plus every sensing instant);
    /// 0 keeps only the summary statistics.
    pub record_stride: usize,
    pub scheme: Scheme,
    pub divergence_guard: f64,
}

impl SimConfig {
    pub fn new(policy: SensorPolicy, horizon: f64, dt: f64, seed: u64) -> Self {
        Self {
            horizon,
            dt,
            h: policy.h,
            seed,
            policy,
            record_stride: 0,
            scheme: Scheme::default(),
            divergence_guard: DEFAULT_DIVERGENCE_GUARD,
        }
    }

    /// Number of `dt` steps per sensing interval.
    pub fn steps_per_sample(&self) -> Result<usize> {
        let ratio = self.h / self.dt;
        let rounded = ratio.round();
        if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "sensing step h = {} must be an integer multiple of dt = {}",
                self.h, self.dt
            )));
        }
        Ok(rounded as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::NonPositiveStep(self.dt));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::NonPositiveStep(self.h));
        }
        self.steps_per_sample()?;
        if !(self.horizon >= self.h && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon {} must be finite and at least h = {}",
                self.horizon, self.h
            )));
        }
        if !(self.divergence_guard > 0.0) {
            return Err(Error::InvalidParameter("divergence guard must be positive".into()));
        }
        if (self.policy.h - self.h).abs() > 1e-12 * self.h {
            return Err(Error::ConfigMismatch(format!(
                "policy built for h = {}, simulation uses h = {}",
                self.policy.h, self.h
            )));
        }
        Ok(())
    }
}

/// Sampled trajectory and running-cost statistics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub x_hat: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    pub u1: Vec<Vec<f64>>,
    pub u2: Vec<Vec<f64>>,
    pub sensed: Vec<bool>,
    pub running_j: Vec<f64>,
    /// Sensing instants, including the sample at `t = 0`.
    pub n_t: usize,
    /// Time average of `‖x‖²_Q + ‖u1‖²_R1 − ‖u2‖²_R2`.
    pub j_empirical: f64,
    /// Time average of `‖e‖²_M1`.
    pub error_cost_empirical: f64,
    pub rate_empirical: f64,
    /// Threshold in force at each sensing event after `t = 0`.
    pub cycle_thresholds: Vec<usize>,
    pub horizon: f64,
    pub seed: u64,
}

/// `J − J*` next to the measured error cost; the two agree in expectation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostDecomposition {
    pub gap: f64,
    pub error_cost: f64,
}

pub fn empirical_cost_decomposition(rec: &TrajectoryRecord, j_star: f64) -> CostDecomposition {
    CostDecomposition {
        gap: rec.j_empirical - j_star,
        error_cost: rec.error_cost_empirical,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    #[serde(rename = "J_empirical")]
    pub j_empirical: f64,
    #[serde(rename = "J_star")]
    pub j_star: f64,
    pub gap: f64,
    pub error_cost_empirical: f64,
    #[serde(rename = "n_T")]
    pub n_t: usize,
    pub rate_empirical: f64,
    pub seed: u64,
    pub horizon: f64,
    pub burn_in: f64,
}

impl TrajectoryRecord {
    pub fn summary(&self, j_star: f64) -> SimSummary {
        SimSummary {
            j_empirical: self.j_empirical,
            j_star,
            gap: self.j_empirical - j_star,
            error_cost_empirical: self.error_cost_empirical,
            n_t: self.n_t,
            rate_empirical: self.rate_empirical,
            seed: self.seed,
            horizon: self.horizon,
            burn_in: 0.0,
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let dim = |v: &Vec<Vec<f64>>| v.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        for (prefix, len) in [
            ("x", dim(&self.x)),
            ("xhat", dim(&self.x_hat)),
            ("e", dim(&self.e)),
            ("u1", dim(&self.u1)),
            ("u2", dim(&self.u2)),
        ] {
            header.extend((1..=len).map(|i| format!("{prefix}_{i}")));
        }
        header.push("sensed".into());
        header.push("running_J".into());
        writeln!(out, "{}", header.join(","))?;

        let mut line = String::new();
        for k in 0..self.times.len() {
            line.clear();
            line.push_str(&num(self.times[k]));
            for block in [&self.x, &self.x_hat, &self.e, &self.u1, &self.u2] {
                for v in &block[k] {
                    line.push(',');
                    line.push_str(&num(*v));
                }
            }
            line.push(',');
            line.push(if self.sensed[k] { '1' } else { '0' });
            line.push(',');
            line.push_str(&num(self.running_j[k]));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Dense row-major matrix for the inner loop.
struct Dense {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Dense {
    fn from(m: &Matrix) -> Self {
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)]))
            .collect();
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    fn apply_add(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn quad(&self, v: &[f64]) -> f64 {
        (0..self.rows)
            .map(|i| {
                let row = &self.data[i * self.cols..(i + 1) * self.cols];
                v[i] * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
            })
            .sum()
    }
}

/// Streaming mean.
#[derive(Default, Clone, Copy)]
struct RunningMean {
    count: u64,
    mean: f64,
}

impl RunningMean {
    fn push(&mut self, v: f64) {
        self.count += 1;
        self.mean += (v - self.mean) / self.count as f64;
    }
}

/// Integrates the closed loop for `cfg.horizon` seconds.
pub fn simulate(spec: &GameSpec, sol: &GameSolution, cfg: &SimConfig) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let n = spec.state_dim();
    if sol.p.shape() != (n, n) {
        return Err(Error::DimensionMismatch("solution does not match the game".into()));
    }
    let steps_per_sample = cfg.steps_per_sample()?;
    let total_steps = (cfg.horizon / cfg.dt).round() as u64;

    // z = [x; x̂]
    let b1k1 = &spec.b1 * &sol.k1;
    let mut drift = Matrix::zeros(2 * n, 2 * n);
    drift.view_mut((0, 0), (n, n)).copy_from(&sol.a_tilde);
    drift.view_mut((0, n), (n, n)).copy_from(&(-&b1k1));
    drift.view_mut((n, n), (n, n)).copy_from(&(&sol.a_tilde - &b1k1));
    let mut noise_in = Matrix::zeros(2 * n, spec.g.ncols());
    noise_in.view_mut((0, 0), (n, spec.g.ncols())).copy_from(&spec.g);

    let (transition, noise) = match cfg.scheme {
        Scheme::Exact => {
            let phi = state_transition(&drift, cfg.dt)?;
            let cov = noise_gramian(&drift, &noise_in, cfg.dt)?;
            (phi, psd_factor(&cov))
        }
        Scheme::EulerMaruyama => (
            Matrix::identity(2 * n, 2 * n) + &drift * cfg.dt,
            &noise_in * cfg.dt.sqrt(),
        ),
    };
    let transition = Dense::from(&transition);
    let noise = Dense::from(&noise);

    let mut stage = Matrix::zeros(2 * n, 2 * n);
    stage.view_mut((0, 0), (n, n)).copy_from(&(&spec.q - &sol.m2));
    stage.view_mut((n, n), (n, n)).copy_from(&sol.m1);
    let stage = Dense::from(&stage);
    let m1 = Dense::from(&sol.m1);
    let k1 = Dense::from(&sol.k1);
    let k2 = Dense::from(&sol.k2);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sensor_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    sensor_rng.set_stream(SENSOR_STREAM);

    let mut z = vec![0.0; 2 * n];
    let x0_factor = Dense::from(&psd_factor(&spec.sigma0));
    let xi0: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    x0_factor.apply(&xi0, &mut z[..n]);
    let (x0, xh0) = z.split_at_mut(n);
    xh0.copy_from_slice(x0);

    let mut sensing = SensingState::activate(&cfg.policy, &mut sensor_rng);
    let mut rec = TrajectoryRecord {
        times: Vec::new(),
        x: Vec::new(),
        x_hat: Vec::new(),
        e: Vec::new(),
        u1: Vec::new(),
        u2: Vec::new(),
        sensed: Vec::new(),
        running_j: Vec::new(),
        n_t: 1,
        j_empirical: 0.0,
        error_cost_empirical: 0.0,
        rate_empirical: 0.0,
        cycle_thresholds: Vec::new(),
        horizon: total_steps as f64 * cfg.dt,
        seed: cfg.seed,
    };

    let mut err = vec![0.0; n];
    let error_cost = |z: &[f64], err: &mut [f64]| {
        for i in 0..n {
            err[i] = z[i] - z[n + i];
        }
        m1.quad(err)
    };

    let record = |rec: &mut TrajectoryRecord, t: f64, z: &[f64], sensed: bool, running: f64| {
        let x = z[..n].to_vec();
        let xh = z[n..].to_vec();
        let e: Vec<f64> = x.iter().zip(&xh).map(|(a, b)| a - b).collect();
        let mut u1 = vec![0.0; k1.rows];
        k1.apply(&xh, &mut u1);
        u1.iter_mut().for_each(|v| *v = 0.0 - *v);
        let mut u2 = vec![0.0; k2.rows];
        k2.apply(&x, &mut u2);
        rec.times.push(t);
        rec.x.push(x);
        rec.x_hat.push(xh);
        rec.e.push(e);
        rec.u1.push(u1);
        rec.u2.push(u2);
        rec.sensed.push(sensed);
        rec.running_j.push(running);
    };

    if cfg.record_stride > 0 {
        record(&mut rec, 0.0, &z, true, 0.0);
    }

    let mut j_mean = RunningMean::default();
    let mut e_mean = RunningMean::default();
    let mut next = vec![0.0; 2 * n];
    let mut xi = vec![0.0; noise.cols];
    let mut age = 0usize;
    let mut c_start = stage.quad(&z);
    let mut e_start = error_cost(&z, &mut err);

    for k in 1..=total_steps {
        for v in xi.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        transition.apply(&z, &mut next);
        noise.apply_add(&xi, &mut next);
        std::mem::swap(&mut z, &mut next);

        let norm = z[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= cfg.divergence_guard) {
            return Err(Error::Diverged {
                time: k as f64 * cfg.dt,
                norm,
                guard: cfg.divergence_guard,
            });
        }

        j_mean.push(0.5 * (c_start + stage.quad(&z)));
        e_mean.push(0.5 * (e_start + error_cost(&z, &mut err)));

        let mut sensed = false;
        if k % steps_per_sample as u64 == 0 {
            age += 1;
            let in_force = sensing.active_threshold;
            if next_sensing_decision(&cfg.policy, &mut sensing, age, &mut sensor_rng) {
                sensed = true;
                age = 0;
                rec.n_t += 1;
                rec.cycle_thresholds.push(in_force);
                let (x, xh) = z.split_at_mut(n);
                xh.copy_from_slice(x);
            }
        }
        c_start = stage.quad(&z);
        e_start = error_cost(&z, &mut err);

        if cfg.record_stride > 0 && (sensed || k % cfg.record_stride as u64 == 0) {
            record(&mut rec, k as f64 * cfg.dt, &z, sensed, j_mean.mean);
        }
    }

    rec.j_empirical = j_mean.mean;
    rec.error_cost_empirical = e_mean.mean;
    rec.rate_empirical = rec.n_t as f64 / rec.horizon;
    Ok(rec)
}

const RENEWAL_PANELS: usize = 2000;

/// Long-run average of `‖e‖²_M1` under a deterministic threshold `eta` on the
/// grid `h`: `(1/(ηh)) ∫₀^{ηh} tr(M1 Σₑ(s)) ds`, by composite Simpson.
pub fn renewal_error_cost(sol: &GameSolution, g: &Matrix, eta: usize, h: f64) -> Result<f64> {
    if eta == 0 {
        return Err(Error::InvalidParameter("threshold must be >= 1".into()));
    }
    if !(h > 0.0) {
        return Err(Error::NonPositiveStep(h));
    }
    let period = eta as f64 * h;
    let step = period / RENEWAL_PANELS as f64;
    let f = |s: f64| -> Result<f64> {
        if s == 0.0 {
            return Ok(0.0);
        }
        Ok((&sol.m1 * error_covariance(&sol.a_tilde, g, s)?).trace())
    };
    let mut sum = f(0.0)? + f(period)?;
    for i in 1..RENEWAL_PANELS {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(i as f64 * step)?;
    }
    Ok(sum * step / 3.0 / period)
}

/// Expected long-run error cost of a (possibly randomized) policy whose
/// threshold is drawn once per run.
pub fn predicted_error_cost(sol: &GameSolution, g: &Matrix, policy: &SensorPolicy) -> Result<f64> {
    let c1 = renewal_error_cost(sol, g, policy.eta_1, policy.h)?;
    if policy.vartheta >= 1.0 || policy.eta_1 == policy.eta_2 {
        return Ok(c1);
    }
    let c2 = renewal_error_cost(sol, g, policy.eta_2, policy.h)?;
    Ok(policy.vartheta * c1 + (1.0 - policy.vartheta) * c2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::solve_game_riccati;
    use crate::sensing::{PolicyMode, Redraw};

    fn setup(g: f64) -> (GameSpec, GameSolution) {
        let spec = GameSpec {
            g: Matrix::from_element(1, 1, g),
            ..GameSpec::scalar_benchmark()
        };
        let sol = solve_game_riccati(&spec, 1e-9, 50).unwrap();
        (spec, sol)
    }

    #[test]
    fn noiseless_origin_stays_put() {
        let (spec, sol) = setup(0.0);
        let mut cfg = SimConfig::new(SensorPolicy::deterministic(3, 0.1), 20.0, 0.01, 5);
        cfg.record_stride = 7;
        let rec = simulate(&spec, &sol, &cfg).unwrap();
        assert!(rec.x.iter().chain(&rec.x_hat).all(|v| v[0] == 0.0));
        assert_eq!(rec.j_empirical, 0.0);
        assert_eq!(rec.error_cost_empirical, 0.0);
    }

    #[test]
    fn identical_seeds_identical_records() {
        let (spec, sol) = setup(1.0);
        let mut cfg = SimConfig::new(SensorPolicy::deterministic(3, 0.1), 50.0, 0.01, 11);
        cfg.record_stride = 3;
        let a = simulate(&spec, &sol, &cfg).unwrap();
        let b = simulate(&spec, &sol, &cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 12;
        assert_ne!(a.x, simulate(&spec, &sol, &cfg).unwrap().x);
    }

    #[test]
    fn record_invariants() {
        let (spec, sol) = setup(1.0);
        let mut policy = SensorPolicy::deterministic(3, 0.1);
        policy.eta_2 = 4;
        policy.vartheta = 0.5;
        policy.mode = PolicyMode::Randomized;
        policy.redraw = Redraw::PerCycle;
        let mut cfg = SimConfig::new(policy, 30.0, 0.01, 2);
        cfg.record_stride = 4;
        let rec = simulate(&spec, &sol, &cfg).unwrap();
        for k in 0..rec.times.len() {
            assert_eq!(rec.e[k][0], rec.x[k][0] - rec.x_hat[k][0]);
            if rec.sensed[k] {
                assert_eq!(rec.e[k][0], 0.0);
            }
        }
        assert_eq!(rec.n_t, rec.sensed.iter().filter(|&&s| s).count());
        assert_eq!(rec.cycle_thresholds.len() + 1, rec.n_t);
    }

    #[test]
    fn sampling_every_step_on_the_integration_grid() {
        let (spec, sol) = setup(1.0);
        let mut cfg = SimConfig::new(SensorPolicy::deterministic(1, 0.01), 20.0, 0.01, 3);
        cfg.record_stride = 1;
        let rec = simulate(&spec, &sol, &cfg).unwrap();
        assert!(rec.e.iter().all(|e| e[0] == 0.0));
        assert_eq!(rec.n_t, 2001);
    }

    #[test]
    fn rate_of_deterministic_threshold() {
        let (spec, sol) = setup(1.0);
        let cfg = SimConfig::new(SensorPolicy::deterministic(3, 0.1), 300.0, 0.01, 4);
        let rec = simulate(&spec, &sol, &cfg).unwrap();
        assert!((rec.rate_empirical - 1.0 / 0.3).abs() <= 1.0 / 300.0 + 1e-12);
    }

    #[test]
    fn mismatched_grid_rejected() {
        let (spec, sol) = setup(1.0);
        let cfg = SimConfig::new(SensorPolicy::deterministic(3, 0.1), 10.0, 0.03, 0);
        assert!(matches!(simulate(&spec, &sol, &cfg), Err(Error::InvalidParameter(_))));
        let mut cfg = SimConfig::new(SensorPolicy::deterministic(3, 0.1), 10.0, 0.01, 0);
        cfg.h = 0.2;
        assert!(matches!(simulate(&spec, &sol, &cfg), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn divergence_guard_trips() {
        let (spec, sol) = setup(1.0);
        let mut cfg = SimConfig::new(SensorPolicy::deterministic(1000, 0.1), 200.0, 0.01, 0);
        cfg.divergence_guard = 10.0;
        assert!(matches!(simulate(&spec, &sol, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn csv_header() {
        let (spec, sol) = setup(1.0);
        let mut cfg = SimConfig::new(SensorPolicy::deterministic(2, 0.1), 1.0, 0.05, 0);
        cfg.record_stride = 1;
        let rec = simulate(&spec, &sol, &cfg).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "t,x_1,xhat_1,e_1,u1_1,u2_1,sensed,running_J"
        );
        assert_eq!(text.lines().count(), rec.times.len() + 1);
    }
}
