//! Quantities that depend on the sensing grid step `h`.
//!
//! Between samples the estimation error obeys `de = Ã e dt + G dW`, so its
//! covariance after an age `s` is `Σₑ(s) = ∫₀ˢ Φ(r) G Gᵀ Φ(r)ᵀ dr` with
//! `Φ(r) = e^{Ãr}`. On the grid this splits exactly into one-step Gramians,
//! `Σₑ(kh) = Σ_{i<k} Φ(ih) Ĝʰ Φ(ih)ᵀ`, and the age cost is
//! `U(Δ) = tr(M1 Σₑ(Δh))`.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::fmt::num;
use crate::game::GameSolution;
use crate::linalg::{expm, is_finite, symmetrize, Matrix};

/// Hard ceiling on the number of tabled ages.
pub const MAX_TABLE_LEN: usize = 1 << 20;

pub fn state_transition(a_tilde: &Matrix, t: f64) -> Result<Matrix> {
    if !a_tilde.is_square() {
        return Err(Error::DimensionMismatch("state transition needs a square drift".into()));
    }
    if !t.is_finite() {
        return Err(Error::NonFinite("state transition time"));
    }
    if t < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "state transition time must be >= 0, got {t}"
        )));
    }
    expm(&(a_tilde * t))
}

/// One-step noise Gramian `∫₀ʰ Φ(s) G Gᵀ Φ(s)ᵀ ds` via Van Loan's block
/// exponential of `[[−Ã, GGᵀ], [0, Ãᵀ]]·h`.
pub fn noise_gramian(a_tilde: &Matrix, g: &Matrix, h: f64) -> Result<Matrix> {
    let n = a_tilde.nrows();
    if !a_tilde.is_square() || g.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "noise gramian: A is {:?}, G is {:?}",
            a_tilde.shape(),
            g.shape()
        )));
    }
    if !h.is_finite() || !is_finite(a_tilde) || !is_finite(g) {
        return Err(Error::NonFinite("noise gramian input"));
    }
    if h <= 0.0 {
        return Err(Error::NonPositiveStep(h));
    }
    let mut block = Matrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(-a_tilde * h));
    block.view_mut((0, n), (n, n)).copy_from(&(g * g.transpose() * h));
    block.view_mut((n, n), (n, n)).copy_from(&(a_tilde.transpose() * h));
    let e = expm(&block)?;
    let f22 = e.view((n, n), (n, n));
    let f12 = e.view((0, n), (n, n));
    Ok(symmetrize(&(f22.transpose() * f12)))
}

/// Error covariance after `age` seconds without a sample.
pub fn error_covariance(a_tilde: &Matrix, g: &Matrix, age: f64) -> Result<Matrix> {
    if !age.is_finite() {
        return Err(Error::NonFinite("error covariance age"));
    }
    if age < 0.0 {
        return Err(Error::InvalidParameter(format!("age must be >= 0, got {age}")));
    }
    if age == 0.0 {
        if g.nrows() != a_tilde.nrows() {
            return Err(Error::DimensionMismatch("error covariance: G rows must match A".into()));
        }
        return Ok(Matrix::zeros(a_tilde.nrows(), a_tilde.nrows()));
    }
    noise_gramian(a_tilde, g, age)
}

/// `10·⌈1/(b h)⌉`, the default table capacity for a budget `b`.
pub fn default_capacity(b: f64, h: f64) -> usize {
    let ratio = (1.0 / (b * h)).ceil();
    if ratio.is_finite() && ratio > 0.0 {
        ((10.0 * ratio) as usize).clamp(2, MAX_TABLE_LEN)
    } else {
        2
    }
}

/// Age costs `U(0..=N)` on the grid `h`, plus what is needed to extend the
/// table or evaluate `U` at fractional ages.
#[derive(Debug, Clone)]
pub struct AgeCostTable {
    pub h: f64,
    pub phi_h: Matrix,
    pub g_tilde_h: Matrix,
    u: Vec<f64>,
    a_tilde: Matrix,
    g: Matrix,
    m1: Matrix,
    /// `Φ(N h)` for the last tabled age `N`.
    phi_last: Matrix,
    /// Set once `U` stops being representable; the table cannot grow past it.
    saturated: bool,
}

impl AgeCostTable {
    /// Largest tabled age.
    pub fn n_max(&self) -> usize {
        self.u.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.u
    }

    pub fn u(&self, delta: usize) -> Result<f64> {
        self.u.get(delta).copied().ok_or(Error::CapacityExceeded {
            requested: delta,
            capacity: self.n_max(),
        })
    }

    pub fn m1(&self) -> &Matrix {
        &self.m1
    }

    pub fn a_tilde(&self) -> &Matrix {
        &self.a_tilde
    }

    pub fn g(&self) -> &Matrix {
        &self.g
    }

    /// `tr(M1 Σₑ(x h))` for real `x ≥ 0`; agrees with the table at integers.
    pub fn u_continuous(&self, x: f64) -> Result<f64> {
        let cov = error_covariance(&self.a_tilde, &self.g, x * self.h)?;
        let v = (&self.m1 * cov).trace();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("continuous age cost"))
        }
    }

    /// Grows the table to hold ages up to `n`. Growth stops early, with an
    /// error, once the age cost overflows.
    pub fn extend_to(&mut self, n: usize) -> Result<()> {
        if n > MAX_TABLE_LEN {
            return Err(Error::CapacityExceeded {
                requested: n,
                capacity: MAX_TABLE_LEN,
            });
        }
        if n <= self.n_max() {
            return Ok(());
        }
        if self.saturated {
            return Err(Error::NonFinite("age cost table"));
        }
        self.u.reserve(n - self.n_max());
        while self.n_max() < n {
            let last = *self.u.last().expect("table is never empty");
            let step = &self.phi_last * &self.g_tilde_h * self.phi_last.transpose();
            let inc = (&self.m1 * step).trace().max(0.0);
            let next = last + inc;
            let next_phi = &self.phi_h * &self.phi_last;
            if !next.is_finite() || !is_finite(&next_phi) {
                self.saturated = true;
                return Err(Error::NonFinite("age cost table"));
            }
            self.u.push(next);
            self.phi_last = next_phi;
        }
        Ok(())
    }

    /// Grows by doubling until age `n` is covered.
    pub fn ensure(&mut self, n: usize) -> Result<()> {
        let mut cap = self.n_max().max(2);
        while cap < n {
            cap = cap.saturating_mul(2);
        }
        self.extend_to(cap.min(MAX_TABLE_LEN).max(n))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "delta,u")?;
        for (delta, u) in self.u.iter().enumerate() {
            writeln!(out, "{delta},{}", num(*u))?;
        }
        Ok(())
    }
}

/// Builds `U(0..=n_max)` with cached transition powers `Φ((i+1)h) = Φ(h) Φ(ih)`.
///
/// If `U` overflows before `n_max` the table is truncated at the last finite
/// age; callers see that as a smaller capacity.
pub fn build_age_cost_table(sol: &GameSolution, g: &Matrix, h: f64, n_max: usize) -> Result<AgeCostTable> {
    if n_max < 2 {
        return Err(Error::InvalidParameter(format!(
            "table capacity must be >= 2, got {n_max}"
        )));
    }
    let phi_h = state_transition(&sol.a_tilde, h)?;
    let g_tilde_h = noise_gramian(&sol.a_tilde, g, h)?;
    let n = sol.a_tilde.nrows();
    let mut table = AgeCostTable {
        h,
        phi_h,
        g_tilde_h,
        u: vec![0.0],
        a_tilde: sol.a_tilde.clone(),
        g: g.clone(),
        m1: sol.m1.clone(),
        phi_last: Matrix::identity(n, n),
        saturated: false,
    };
    match table.extend_to(n_max) {
        Ok(()) => {}
        Err(Error::NonFinite(_)) if table.n_max() >= 2 => {
            log::warn!("age cost overflows beyond delta = {}; table truncated", table.n_max());
        }
        Err(e) => return Err(e),
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{solve_game_riccati, GameSpec};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn s(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    /// Truncated power series of e^x, independent of the Padé path.
    fn exp_series(x: f64) -> f64 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..400 {
            term *= x / k as f64;
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
        }
        sum
    }

    #[test]
    fn transition_at_zero_is_identity() {
        let a = Matrix::from_row_slice(2, 2, &[0.3, -1.0, 2.0, -0.7]);
        assert_eq!(state_transition(&a, 0.0).unwrap(), Matrix::identity(2, 2));
    }

    #[test]
    fn scalar_transition_matches_series() {
        let phi = state_transition(&s(2.5), 0.1).unwrap();
        assert_relative_eq!(phi[(0, 0)], exp_series(0.25), max_relative = 1e-14);
    }

    #[test]
    fn transition_rejects_bad_time() {
        assert!(state_transition(&s(1.0), -0.1).is_err());
        assert!(matches!(state_transition(&s(f64::NAN), 0.1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn gramian_zero_noise() {
        let g = noise_gramian(&s(2.5), &s(0.0), 0.1).unwrap();
        assert_eq!(g[(0, 0)], 0.0);
    }

    #[test]
    fn gramian_scalar_closed_form() {
        let g = noise_gramian(&s(2.5), &s(1.0), 0.1).unwrap();
        assert_relative_eq!(g[(0, 0)], (exp_series(0.5) - 1.0) / 5.0, max_relative = 1e-13);
    }

    #[test]
    fn gramian_rejects_nonpositive_step() {
        assert!(matches!(
            noise_gramian(&s(1.0), &s(1.0), 0.0),
            Err(Error::NonPositiveStep(_))
        ));
        assert!(matches!(
            noise_gramian(&s(1.0), &s(1.0), -1.0),
            Err(Error::NonPositiveStep(_))
        ));
    }

    #[test]
    fn gramian_with_singular_drift() {
        // Ã = 0: the integral is G Gᵀ h.
        let g = noise_gramian(&s(0.0), &s(2.0), 0.3).unwrap();
        assert_relative_eq!(g[(0, 0)], 1.2, max_relative = 1e-14);
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let gm = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let out = noise_gramian(&a, &gm, 1.0).unwrap();
        // Double integrator: [[1/3, 1/2], [1/2, 1]].
        assert_relative_eq!(out[(0, 0)], 1.0 / 3.0, max_relative = 1e-13);
        assert_relative_eq!(out[(0, 1)], 0.5, max_relative = 1e-13);
        assert_relative_eq!(out[(1, 1)], 1.0, max_relative = 1e-13);
    }

    #[test]
    fn gramian_additivity() {
        let a = s(2.5);
        let g = s(1.0);
        let g1 = noise_gramian(&a, &g, 0.1).unwrap();
        let g2 = noise_gramian(&a, &g, 0.2).unwrap();
        let phi = state_transition(&a, 0.1).unwrap();
        let split = &g1 + &phi * &g1 * phi.transpose();
        assert_abs_diff_eq!((g2 - split).norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn error_covariance_examples() {
        let a = s(2.5);
        let g = s(1.0);
        assert_eq!(error_covariance(&a, &g, 0.0).unwrap()[(0, 0)], 0.0);
        let c = error_covariance(&a, &g, 0.2).unwrap();
        assert_relative_eq!(c[(0, 0)], (exp_series(1.0) - 1.0) / 5.0, max_relative = 1e-13);
        assert!(error_covariance(&a, &g, -1.0).is_err());
    }

    #[test]
    fn error_covariance_zero_drift_limit() {
        // 2Ã = 0: the closed form degenerates to t.
        let c = error_covariance(&s(0.0), &s(1.0), 0.7).unwrap();
        assert_relative_eq!(c[(0, 0)], 0.7, max_relative = 1e-14);
    }

    fn benchmark_table(h: f64, n: usize) -> AgeCostTable {
        let spec = GameSpec::scalar_benchmark();
        let sol = solve_game_riccati(&spec, 1e-9, 50).unwrap();
        build_age_cost_table(&sol, &spec.g, h, n).unwrap()
    }

    #[test]
    fn table_head_values() {
        let t = benchmark_table(0.1, 10);
        assert_eq!(t.u(0).unwrap(), 0.0);
        assert_relative_eq!(
            t.u(1).unwrap(),
            16.0 * (exp_series(0.5) - 1.0) / 5.0,
            max_relative = 1e-9
        );
        assert_relative_eq!(t.u(1).unwrap(), 2.07591, max_relative = 1e-5);
        let inc = (t.m1() * &t.phi_h * &t.g_tilde_h * t.phi_h.transpose()).trace();
        assert_eq!(t.u(2).unwrap() - t.u(1).unwrap(), inc);
    }

    #[test]
    fn table_matches_scalar_closed_form() {
        let t = benchmark_table(0.1, 60);
        for (k, &u) in t.values().iter().enumerate() {
            let expected = 16.0 * (exp_series(0.5 * k as f64) - 1.0) / 5.0;
            assert_relative_eq!(u, expected, max_relative = 1e-9, epsilon = 1e-300);
        }
    }

    #[test]
    fn table_capacity_and_extension() {
        let mut t = benchmark_table(0.1, 4);
        assert!(matches!(
            t.u(5),
            Err(Error::CapacityExceeded {
                requested: 5,
                capacity: 4
            })
        ));
        t.ensure(9).unwrap();
        assert_eq!(t.n_max(), 16);
        let fresh = benchmark_table(0.1, 16);
        assert_eq!(t.values(), fresh.values());
    }

    #[test]
    fn table_truncates_on_overflow() {
        // e^{0.5 Δ} overflows near Δ ≈ 1420.
        let t = benchmark_table(0.1, 5000);
        assert!(t.n_max() > 1000 && t.n_max() < 1500);
        assert!(t.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn fractional_cost_agrees_at_integers() {
        let t = benchmark_table(0.1, 20);
        for k in [0usize, 1, 5, 20] {
            assert_relative_eq!(t.u_continuous(k as f64).unwrap(), t.u(k).unwrap(), max_relative = 1e-10);
        }
        let mid = t.u_continuous(2.5).unwrap();
        assert!(mid > t.u(2).unwrap() && mid < t.u(3).unwrap());
    }

    #[test]
    fn capacity_default() {
        assert_eq!(default_capacity(0.25, 1.0), 40);
        assert_eq!(default_capacity(100.0, 0.1), 10);
    }

    #[test]
    fn csv_header_and_rows() {
        let t = benchmark_table(0.1, 3);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "delta,u");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0,"));
    }
}
