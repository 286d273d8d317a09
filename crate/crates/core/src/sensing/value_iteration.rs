use std::borrow::Cow;
use std::io::{self, Write};

use super::MdpConfig;
use crate::discretization::AgeCostTable;
use crate::error::{Error, Result};
use crate::fmt::num;

/// Relaxation used by relative value iteration; the deterministic renewal
/// cycle is periodic, so the undamped recursion would oscillate.
const APERIODICITY: f64 = 0.5;

/// Discounted value function on the truncated ages `1..=N`.
#[derive(Debug, Clone)]
pub struct DiscountedSolution {
    pub beta: f64,
    pub lambda: f64,
    /// `values[Δ − 1] = V(Δ)`
    pub values: Vec<f64>,
    /// Greedy action per age, `true` = sense.
    pub sense: Vec<bool>,
    pub threshold: usize,
    /// Sup-norm Bellman residual over ages `1..=N/2`.
    pub residual: f64,
    pub sweeps: usize,
}

impl DiscountedSolution {
    pub fn value(&self, delta: usize) -> f64 {
        self.values[delta - 1]
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "delta,value,action")?;
        for (i, (v, s)) in self.values.iter().zip(&self.sense).enumerate() {
            writeln!(out, "{},{},{}", i + 1, num(*v), u8::from(*s))?;
        }
        Ok(())
    }
}

/// Average-cost solution from relative value iteration, referenced to age 1.
#[derive(Debug, Clone)]
pub struct AverageCostSolution {
    pub lambda: f64,
    pub gain: f64,
    /// `bias[Δ − 1] = f(Δ) = V(Δ) − V(1)`
    pub bias: Vec<f64>,
    pub sense: Vec<bool>,
    pub threshold: usize,
    /// `max |V̄ + f(Δ) − min_δ {U(Δ) + λδ + f(Δ')}|` over ages `1..=N/2`.
    pub residual: f64,
    pub sweeps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VanishingPoint {
    pub beta: f64,
    /// `(1 − β) V_β(1)`
    pub scaled_value: f64,
    pub threshold: usize,
}

fn costs(table: &AgeCostTable, n: usize) -> Result<Vec<f64>> {
    let mut table = Cow::Borrowed(table);
    if table.n_max() < n {
        table.to_mut().extend_to(n)?;
    }
    Ok(table.values()[1..=n].to_vec())
}

/// One application of the Bellman operator. `discount = 1` gives the
/// undiscounted operator used by relative value iteration.
fn bellman(u: &[f64], lambda: f64, discount: f64, v: &[f64], out: &mut [f64], sense: &mut [bool]) {
    let n = u.len();
    let reset = lambda + discount * v[0];
    for i in 0..n {
        let next = v[(i + 1).min(n - 1)];
        let q_sense = u[i] + reset;
        let q_wait = u[i] + discount * next;
        // ties go to sensing
        sense[i] = q_sense <= q_wait;
        out[i] = if sense[i] { q_sense } else { q_wait };
    }
}

/// A change is negligible once it is below `tol` or within a few ulps of the
/// value itself (age costs grow fast, so absolute resolution is lost there).
fn settled(change: f64, value: f64, tol: f64) -> bool {
    change <= tol.max(8.0 * f64::EPSILON * value.abs())
}

fn threshold_of(sense: &[bool]) -> Result<usize> {
    let first = sense
        .iter()
        .position(|&s| s)
        .ok_or(Error::TruncationTooSmall(sense.len()))?;
    if let Some(wait) = sense[first..].iter().position(|&s| !s) {
        return Err(Error::NonThresholdPolicy {
            sense_at: first + 1,
            wait_at: first + wait + 1,
        });
    }
    Ok(first + 1)
}

/// Value iteration for the discounted Lagrangian cost on ages `1..=cfg.n_max`.
///
/// Waiting at the truncation age keeps the age there.
pub fn discounted_value_iteration(table: &AgeCostTable, cfg: &MdpConfig) -> Result<DiscountedSolution> {
    cfg.validate()?;
    let u = costs(table, cfg.n_max)?;
    let n = u.len();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut sense = vec![false; n];
    let mut sweeps = 0;
    loop {
        bellman(&u, cfg.lambda, cfg.beta, &v, &mut next, &mut sense);
        sweeps += 1;
        let mut worst = 0.0f64;
        let mut done = true;
        for (a, b) in next.iter().zip(&v) {
            let change = (a - b).abs();
            worst = worst.max(change);
            done &= settled(change, *a, cfg.vi_tol);
        }
        std::mem::swap(&mut v, &mut next);
        if done {
            break;
        }
        if sweeps >= cfg.max_sweeps {
            return Err(Error::NoConvergence {
                iterations: sweeps,
                change: worst,
            });
        }
    }

    bellman(&u, cfg.lambda, cfg.beta, &v, &mut next, &mut sense);
    let half = (n / 2).max(1);
    let residual = next[..half]
        .iter()
        .zip(&v)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let threshold = threshold_of(&sense)?;
    Ok(DiscountedSolution {
        beta: cfg.beta,
        lambda: cfg.lambda,
        values: v,
        sense,
        threshold,
        residual,
        sweeps,
    })
}

/// Relative value iteration for the average Lagrangian cost, with age 1 as
/// the reference state.
pub fn relative_value_iteration(table: &AgeCostTable, cfg: &MdpConfig) -> Result<AverageCostSolution> {
    cfg.validate()?;
    let u = costs(table, cfg.n_max)?;
    let n = u.len();
    let mut f = vec![0.0; n];
    let mut tf = vec![0.0; n];
    let mut sense = vec![false; n];
    let mut sweeps = 0;
    loop {
        bellman(&u, cfg.lambda, 1.0, &f, &mut tf, &mut sense);
        sweeps += 1;
        let w0 = (1.0 - APERIODICITY) * f[0] + APERIODICITY * tf[0];
        let mut worst = 0.0f64;
        let mut done = true;
        for (fi, ti) in f.iter_mut().zip(&tf) {
            let updated = (1.0 - APERIODICITY) * *fi + APERIODICITY * ti - w0;
            let change = (updated - *fi).abs();
            worst = worst.max(change);
            done &= settled(change, updated, cfg.vi_tol);
            *fi = updated;
        }
        if done {
            break;
        }
        if sweeps >= cfg.max_sweeps {
            return Err(Error::NoConvergence {
                iterations: sweeps,
                change: worst,
            });
        }
    }

    bellman(&u, cfg.lambda, 1.0, &f, &mut tf, &mut sense);
    let gain = tf[0];
    let half = (n / 2).max(1);
    let residual = (0..half).map(|i| (gain + f[i] - tf[i]).abs()).fold(0.0, f64::max);
    let threshold = threshold_of(&sense)?;
    Ok(AverageCostSolution {
        lambda: cfg.lambda,
        gain,
        bias: f,
        sense,
        threshold,
        residual,
        sweeps,
    })
}

/// `(1 − β) V_β(1)` along an increasing sequence of discount factors.
pub fn vanishing_discount_check(
    table: &AgeCostTable,
    lambda: f64,
    betas: &[f64],
    base: &MdpConfig,
) -> Result<Vec<VanishingPoint>> {
    if betas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter(
            "discount factors must be strictly increasing".into(),
        ));
    }
    betas
        .iter()
        .map(|&beta| {
            let cfg = MdpConfig {
                beta,
                lambda,
                ..base.clone()
            };
            let sol = discounted_value_iteration(table, &cfg)?;
            Ok(VanishingPoint {
                beta,
                scaled_value: (1.0 - beta) * sol.value(1),
                threshold: sol.threshold,
            })
        })
        .collect()
}
