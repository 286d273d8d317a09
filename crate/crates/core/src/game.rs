//! Full-information saddle point of the LQ zero-sum game.
//!
//! The minimizer (player 1) and maximizer (player 2) share the drift
//!
//! ```text
//! dx = (A x + B1 u1 + B2 u2) dt + G dW
//! ```
//!
//! and the running payoff `‖x‖²_Q + ‖u1‖²_R1 − ‖u2‖²_R2`. The saddle point is
//! `u1 = −K1 x`, `u2 = K2 x` where `P` solves the generalized Riccati equation
//!
//! ```text
//! AᵀP + PA + Q + P (B2 R2⁻¹ B2ᵀ − B1 R1⁻¹ B1ᵀ) P = 0.
//! ```
//!
//! `P` is computed from the stable invariant subspace of the Hamiltonian
//! (matrix sign function) and polished with Newton steps on the residual.

use log::warn;

use crate::error::{Error, Result};
use crate::linalg::{eigen_real_parts, is_finite, is_psd, min_sym_eigenvalue, solve_lyapunov, symmetrize, Matrix};

pub const DEFAULT_RICCATI_TOL: f64 = 1e-9;
pub const DEFAULT_NEWTON_ITERS: usize = 50;

const SIGN_MAX_ITERS: usize = 100;
const SIGN_TOL: f64 = 1e-13;

/// Continuous-time game parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSpec {
    pub a: Matrix,
    pub b1: Matrix,
    pub b2: Matrix,
    pub g: Matrix,
    pub q: Matrix,
    pub r1: Matrix,
    pub r2: Matrix,
    pub sigma0: Matrix,
}

impl GameSpec {
    /// The scalar benchmark system with unit noise gain and a deterministic
    /// zero initial state.
    pub fn scalar_benchmark() -> Self {
        let s = |v: f64| Matrix::from_element(1, 1, v);
        Self {
            a: s(0.5),
            b1: s(1.0),
            b2: s(0.5),
            g: s(1.0),
            q: s(4.0),
            r1: s(1.0),
            r2: s(0.5),
            sigma0: s(0.0),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        let dim = |name: &str, m: &Matrix, rows: usize, cols: Option<usize>| -> Result<()> {
            if m.nrows() != rows || cols.is_some_and(|c| m.ncols() != c) {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {rows}x{}",
                    m.nrows(),
                    m.ncols(),
                    cols.map_or("*".to_string(), |c| c.to_string())
                )));
            }
            Ok(())
        };
        if n == 0 {
            return Err(Error::DimensionMismatch("A must be non-empty".into()));
        }
        dim("A", &self.a, n, Some(n))?;
        dim("B1", &self.b1, n, None)?;
        dim("B2", &self.b2, n, None)?;
        dim("G", &self.g, n, None)?;
        dim("Q", &self.q, n, Some(n))?;
        dim("R1", &self.r1, self.b1.ncols(), Some(self.b1.ncols()))?;
        dim("R2", &self.r2, self.b2.ncols(), Some(self.b2.ncols()))?;
        dim("Sigma0", &self.sigma0, n, Some(n))?;

        for (name, m) in self.named() {
            if !is_finite(m) {
                return Err(Error::InvalidParameter(format!("{name} has non-finite entries")));
            }
        }
        for (name, m) in [
            ("Q", &self.q),
            ("R1", &self.r1),
            ("R2", &self.r2),
            ("Sigma0", &self.sigma0),
        ] {
            if (m - m.transpose()).norm() > 1e-10 * (1.0 + m.norm()) {
                return Err(Error::InvalidParameter(format!("{name} must be symmetric")));
            }
        }
        if !is_psd(&self.q) {
            return Err(Error::InvalidParameter("Q must be positive semidefinite".into()));
        }
        if !is_psd(&self.sigma0) {
            return Err(Error::InvalidParameter("Sigma0 must be positive semidefinite".into()));
        }
        for (name, r) in [("R1", &self.r1), ("R2", &self.r2)] {
            if r.nrows() > 0 && min_sym_eigenvalue(r) <= 1e-14 * r.norm() {
                return Err(Error::InvalidParameter(format!("{name} must be positive definite")));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, &Matrix); 8] {
        [
            ("A", &self.a),
            ("B1", &self.b1),
            ("B2", &self.b2),
            ("G", &self.g),
            ("Q", &self.q),
            ("R1", &self.r1),
            ("R2", &self.r2),
            ("Sigma0", &self.sigma0),
        ]
    }
}

/// Saddle-point solution and the derived matrices used by the estimator,
/// the sensor scheduler and the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSolution {
    pub p: Matrix,
    /// `R1⁻¹ B1ᵀ P`
    pub k1: Matrix,
    /// `R2⁻¹ B2ᵀ P`
    pub k2: Matrix,
    /// Drift seen by player 1 once player 2 plays `u2 = K2 x`.
    pub a_tilde: Matrix,
    /// `Q − P B2 R2⁻¹ B2ᵀ P`; may be indefinite.
    pub q_tilde: Matrix,
    /// Weight of the estimation error in player 1's cost.
    pub m1: Matrix,
    pub m2: Matrix,
    /// Security level `tr(P G Gᵀ)`.
    pub j_star: f64,
    pub residual_norm: f64,
    pub p_min_eigenvalue: f64,
    /// Whether `A − B1 K1 + B2 K2` is Hurwitz.
    pub stabilizing: bool,
}

struct Weights {
    /// `B1 R1⁻¹ B1ᵀ`
    s1: Matrix,
    /// `B2 R2⁻¹ B2ᵀ`
    s2: Matrix,
    r1_inv: Matrix,
    r2_inv: Matrix,
}

fn spd_inverse(name: &str, r: &Matrix) -> Result<Matrix> {
    if r.nrows() == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    r.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::InvalidParameter(format!("{name} must be positive definite")))
}

fn weights(spec: &GameSpec) -> Result<Weights> {
    let r1_inv = spd_inverse("R1", &spec.r1)?;
    let r2_inv = spd_inverse("R2", &spec.r2)?;
    let s1 = &spec.b1 * &r1_inv * spec.b1.transpose();
    let s2 = &spec.b2 * &r2_inv * spec.b2.transpose();
    Ok(Weights {
        s1: symmetrize(&s1),
        s2: symmetrize(&s2),
        r1_inv,
        r2_inv,
    })
}

fn gare_residual(spec: &GameSpec, s: &Matrix, p: &Matrix) -> Matrix {
    spec.a.transpose() * p + p * &spec.a + &spec.q - p * s * p
}

/// Matrix sign function by scaled Newton iteration.
fn matrix_sign(h: &Matrix) -> Result<Matrix> {
    let mut z = h.clone();
    for _ in 0..SIGN_MAX_ITERS {
        let z_inv = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::NoStabilizingSolution("Hamiltonian has eigenvalues on the imaginary axis".into()))?;
        let scale = (z_inv.norm() / z.norm()).sqrt();
        let next = (&z * scale + z_inv / scale) * 0.5;
        if !is_finite(&next) {
            return Err(Error::NoStabilizingSolution(
                "sign iteration produced non-finite values".into(),
            ));
        }
        let change = (&next - &z).norm();
        z = next;
        if change <= SIGN_TOL * z.norm() {
            return Ok(z);
        }
    }
    Err(Error::NoStabilizingSolution(
        "sign iteration did not converge; Hamiltonian eigenvalues are near the imaginary axis".into(),
    ))
}

/// Stabilizing solution from the stable invariant subspace of the Hamiltonian.
fn hamiltonian_solution(spec: &GameSpec, s: &Matrix) -> Result<Matrix> {
    let n = spec.state_dim();
    let mut h = Matrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&spec.a);
    h.view_mut((0, n), (n, n)).copy_from(&(-s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-&spec.q));
    h.view_mut((n, n), (n, n)).copy_from(&(-spec.a.transpose()));

    let w = matrix_sign(&h)?;
    let eye = Matrix::identity(n, n);
    // The stable subspace is ker(W + I); with basis [I; P] this reads
    // [W12; W22 + I] P = −[W11 + I; W21].
    let mut lhs = Matrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w.view((n, n), (n, n)) + &eye));
    let mut rhs = Matrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(w.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w.view((n, 0), (n, n))));

    let p = lhs
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::NoStabilizingSolution(format!("subspace extraction failed: {e}")))?;
    if !is_finite(&p) {
        return Err(Error::NoStabilizingSolution(
            "stable subspace is not a graph over the state".into(),
        ));
    }
    Ok(symmetrize(&p))
}

/// Newton polishing on the GARE residual, symmetrizing after each step.
fn newton_refine(spec: &GameSpec, s: &Matrix, mut p: Matrix, tol: f64, max_iter: usize) -> Matrix {
    let mut res = gare_residual(spec, s, &p).norm();
    for _ in 0..max_iter {
        if res <= tol * 1e-3 {
            break;
        }
        let closed = &spec.a - s * &p;
        let Ok(step) = solve_lyapunov(&closed, &gare_residual(spec, s, &p)) else {
            break;
        };
        let candidate = symmetrize(&(&p + step));
        let cand_res = gare_residual(spec, s, &candidate).norm();
        if !(cand_res < res) {
            break;
        }
        p = candidate;
        res = cand_res;
    }
    p
}

/// Solves the game Riccati equation and derives the saddle-point quantities.
pub fn solve_game_riccati(spec: &GameSpec, tol: f64, max_iter: usize) -> Result<GameSolution> {
    spec.validate()?;
    let w = weights(spec)?;
    let s = &w.s1 - &w.s2;
    let n = spec.state_dim();

    let p = match hamiltonian_solution(spec, &s) {
        Ok(p) => newton_refine(spec, &s, p, tol, max_iter),
        // With Q = 0 the zero matrix solves the equation and is the minimal
        // semidefinite solution, even when no stabilizing one exists.
        Err(_) if spec.q.iter().all(|&v| v == 0.0) => Matrix::zeros(n, n),
        Err(e) => return Err(e),
    };

    let residual_norm = gare_residual(spec, &s, &p).norm();
    if !(residual_norm <= tol) {
        return Err(Error::NoStabilizingSolution(format!(
            "Riccati residual {residual_norm:e} exceeds tolerance {tol:e}"
        )));
    }
    let p_min_eigenvalue = min_sym_eigenvalue(&p);
    if !is_psd(&p) {
        return Err(Error::NoStabilizingSolution(format!(
            "solution is not positive semidefinite (min eigenvalue {p_min_eigenvalue:e}); the game is ill-posed"
        )));
    }
    let stabilizing = eigen_real_parts(&(&spec.a - &s * &p)).iter().all(|&re| re < 0.0);
    if !stabilizing {
        warn!("Riccati solution is not stabilizing; the closed loop is not Hurwitz");
    }

    let k1 = &w.r1_inv * spec.b1.transpose() * &p;
    let k2 = &w.r2_inv * spec.b2.transpose() * &p;
    let m1 = symmetrize(&(&p * &w.s1 * &p));
    let m2 = symmetrize(&(&p * &w.s2 * &p));
    let a_tilde = &spec.a + &w.s2 * &p;
    let q_tilde = &spec.q - &m2;
    if min_sym_eigenvalue(&q_tilde) < -1e-10 * (1.0 + q_tilde.norm()) {
        warn!("Q_tilde = Q - P B2 R2^-1 B2' P is indefinite; only the transformed residual identity is enforced");
    }
    let j_star = security_level(&p, &spec.g)?;

    Ok(GameSolution {
        p,
        k1,
        k2,
        a_tilde,
        q_tilde,
        m1,
        m2,
        j_star,
        residual_norm,
        p_min_eigenvalue,
        stabilizing,
    })
}

/// Security level `tr(P G Gᵀ)`.
pub fn security_level(p: &Matrix, g: &Matrix) -> Result<f64> {
    if !p.is_square() || g.nrows() != p.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "security level: P is {:?}, G is {:?}",
            p.shape(),
            g.shape()
        )));
    }
    Ok((p * g * g.transpose()).trace())
}

/// Norm of `ÃᵀP + PÃ + Q̃ − P B1 R1⁻¹ B1ᵀ P`, which vanishes whenever `P`
/// solves the game equation.
pub fn transformed_are_residual(sol: &GameSolution, spec: &GameSpec) -> Result<f64> {
    let n = spec.state_dim();
    if sol.p.shape() != (n, n) || sol.a_tilde.shape() != (n, n) || sol.q_tilde.shape() != (n, n) {
        return Err(Error::DimensionMismatch(
            "solution does not match the game dimensions".into(),
        ));
    }
    let w = weights(spec)?;
    let p = &sol.p;
    let r = sol.a_tilde.transpose() * p + p * &sol.a_tilde + &sol.q_tilde - p * &w.s1 * p;
    Ok(r.norm())
}
