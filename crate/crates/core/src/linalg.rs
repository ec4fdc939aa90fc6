//! Small dense helpers for symmetric PSD control matrices.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalue tolerance for PSD membership.
pub const PSD_TOL: f64 = 1e-12;

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square()
        && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    if m.nrows() == 2 {
        // Closed form keeps the hot condition checks allocation-free.
        let (a, b, d) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
        let mean = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        return mean - rad;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::NotPsd(format!("{}x{} is not square", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPsd("non-finite entry".into()));
    }
    if !is_symmetric(m, PSD_TOL) {
        return Err(Error::NotPsd("matrix is not symmetric".into()));
    }
    let ev = min_eigenvalue(m);
    if ev < -PSD_TOL {
        return Err(Error::NotPsd(format!("minimum eigenvalue {ev}")));
    }
    Ok(())
}

/// `L` with `L L^T = m`: Cholesky when `m` is positive definite, otherwise
/// the eigen factor `V sqrt(max(Λ, 0))` so rank-deficient controls work.
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_psd(m)?;
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut v = eig.eigenvectors;
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        v.column_mut(j).scale_mut(s);
    }
    Ok(v)
}

pub fn trace(m: &[f64], d: usize) -> f64 {
    (0..d).map(|i| m[i * d + i]).sum()
}
