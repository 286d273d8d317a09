//! Small dense linear-algebra helpers shared by the solver and discretization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn is_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn asymmetry(m: &Matrix) -> f64 {
    (m - m.transpose()).norm()
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Real parts of the eigenvalues of a general square matrix.
pub fn eigen_real_parts(m: &Matrix) -> Vec<f64> {
    m.complex_eigenvalues().iter().map(|c| c.re).collect()
}

/// Semidefiniteness test used throughout: `λ_min ≥ −1e-8·(1 + ‖m‖)`.
pub fn is_psd(m: &Matrix) -> bool {
    min_sym_eigenvalue(m) >= -1e-8 * (1.0 + m.norm())
}

/// Solves `Aᵀ X + X A + C = 0` by vectorization.
///
/// Dense `n² × n²` LU, meant for the small state dimensions this crate targets.
pub fn solve_lyapunov(a: &Matrix, c: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    if a.ncols() != n || c.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "lyapunov: A is {:?}, C is {:?}",
            a.shape(),
            c.shape()
        )));
    }
    let at = a.transpose();
    let eye = Matrix::identity(n, n);
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -Vector::from_column_slice(c.as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NoStabilizingSolution("Lyapunov operator is singular".into()))?;
    Ok(Matrix::from_column_slice(n, n, sol.as_slice()))
}

/// Factor `L` with `L Lᵀ = S` for symmetric PSD `S`; negative rounding
/// eigenvalues are clipped to zero.
pub fn psd_factor(s: &Matrix) -> Matrix {
    let eig = symmetrize(s).symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&roots)
}

/// Matrix exponential (scaling and squaring with a Padé approximant).
pub fn expm(m: &Matrix) -> Result<Matrix> {
    if !is_finite(m) {
        return Err(Error::NonFinite("matrix exponential input"));
    }
    let out = m.exp();
    if !is_finite(&out) {
        return Err(Error::NonFinite("matrix exponential output"));
    }
    Ok(out)
}

/// Builds a matrix from row-major nested rows.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch("ragged matrix rows".into()));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lyapunov_scalar() {
        // 2·(−1.5)·x + 3 = 0
        let a = Matrix::from_element(1, 1, -1.5);
        let c = Matrix::from_element(1, 1, 3.0);
        let x = solve_lyapunov(&a, &c).unwrap();
        assert_relative_eq!(x[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn lyapunov_residual_small_for_stable_matrix() {
        let a = Matrix::from_row_slice(3, 3, &[-2.0, 1.0, 0.0, 0.3, -1.0, 0.5, 0.0, -0.4, -3.0]);
        let c = Matrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.2, 0.0, 0.2, 0.5]);
        let x = solve_lyapunov(&a, &c).unwrap();
        let res = a.transpose() * &x + &x * &a + &c;
        assert!(res.norm() < 1e-12);
        assert!(asymmetry(&x) < 1e-12);
    }

    #[test]
    fn psd_factor_reconstructs() {
        let s = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let l = psd_factor(&s);
        assert!((&l * l.transpose() - &s).norm() < 1e-12);
        let zero = Matrix::zeros(2, 2);
        assert_eq!(psd_factor(&zero).norm(), 0.0);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }
}
