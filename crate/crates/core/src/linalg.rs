//! Small dense linear-algebra helpers shared across the crate.
//!
//! Symmetric spectra are always computed with nalgebra's dedicated symmetric
//! eigensolver, never a general nonsymmetric routine, so results are
//! order-stable and exact to roundoff for the matrix sizes used here
//! (d up to a few dozen).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues of a symmetric matrix, ascending.
///
/// The input is symmetrized as `(m + m^T)/2` first so that callers may pass
/// products like `L^T L` that are symmetric only up to roundoff.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut vals = sym.symmetric_eigenvalues();
    vals.as_mut_slice()
        .sort_by(|a, b| a.partial_cmp(b).expect("eigenvalue is NaN"));
    vals
}

/// Smallest and largest eigenvalues of a symmetric matrix.
pub fn symmetric_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let vals = symmetric_eigenvalues(m);
    (vals[0], vals[vals.len() - 1])
}

/// Matrix measure (logarithmic norm) induced by the Euclidean norm:
/// the largest eigenvalue of the symmetric part `(a + a^T)/2`.
///
/// Can be negative; for skew-symmetric matrices it is exactly zero.
pub fn matrix_measure(a: &DMatrix<f64>) -> f64 {
    assert_eq!(a.nrows(), a.ncols(), "matrix measure requires a square matrix");
    symmetric_eigen_range(a).1
}

/// Spectral norm computed through the symmetric eigensolver on `m^T m`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    let (_, max) = symmetric_eigen_range(&gram);
    max.max(0.0).sqrt()
}

/// Condition number (ratio of extreme eigenvalues) of a symmetric
/// positive-definite matrix. Returns `f64::INFINITY` when the smallest
/// eigenvalue is not strictly positive.
pub fn spd_condition(m: &DMatrix<f64>) -> f64 {
    let (min, max) = symmetric_eigen_range(m);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solve `m x = b` for symmetric positive-definite `m` via Cholesky.
pub fn solve_spd(m: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{context}: matrix is not positive definite")))?;
    Ok(chol.solve(b))
}

/// Log-determinant of a symmetric positive-definite matrix via Cholesky.
pub fn log_det_spd(m: &DMatrix<f64>, context: &str) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{context}: matrix is not positive definite")))?;
    Ok(chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0)
}

/// True when every entry is finite.
pub fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// True when every entry is finite.
pub fn all_finite_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}
