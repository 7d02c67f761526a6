//! Small dense linear-algebra helpers shared by the analysis modules.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues of a symmetrized covariance below this are treated as real
/// negativity rather than round-off.
pub const PSD_FLOOR: f64 = 1e-10;

/// Relative singular-value cutoff used for rank decisions.
pub const RANK_TOL: f64 = 1e-9;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(sym.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetrize and clamp round-off negativity to zero.
///
/// Eigenvalues in `[-PSD_FLOOR, 0)` are clamped; anything lower is an error.
pub fn psd_repair(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    if sym.nrows() == 0 {
        return Ok(sym);
    }
    let eig = SymmetricEigen::new(sym.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    if min < -PSD_FLOOR {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    if min >= 0.0 {
        return Ok(sym);
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * DMatrix::from_diagonal(&clamped) * q.transpose())))
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0_f64, f64::max)
}

/// Rank with singular values below `RANK_TOL * sigma_max` counted as zero.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let top = sv.iter().copied().fold(0.0_f64, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * top).count()
}

/// Solves `X = A X A^T + Q` by Smith doubling.
///
/// The caller is responsible for `A` being Schur stable; the iteration is
/// capped and the final fixed-point residual is checked against `tol`
/// (scaled by `max(1, |X|)`).
pub fn discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "lyapunov: A is {:?}, Q is {:?}",
            a.shape(),
            q.shape()
        )));
    }
    let mut x = symmetrize(q);
    let mut ak = a.clone();
    let mut iterations = 0;
    // Each pass doubles the number of accumulated terms; 64 passes cover any
    // spectral radius that is not within rounding of one.
    while iterations < 64 {
        let incr = &ak * &x * ak.transpose();
        x += &incr;
        x = symmetrize(&x);
        ak = &ak * &ak;
        iterations += 1;
        if max_abs(&incr) <= f64::EPSILON * max_abs(&x) || max_abs(&ak) == 0.0 {
            break;
        }
        if !x.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    let residual = max_abs_diff(&(a * &x * a.transpose() + q), &x);
    if !residual.is_finite() || residual > tol * max_abs(&x).max(1.0) {
        return Err(Error::NoConvergence { iterations, residual });
    }
    Ok(x)
}

/// Symmetric PSD square root, clamping negative round-off.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    q * DMatrix::from_diagonal(&d) * q.transpose()
}

pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m))
}

/// Inverse and log-determinant of a symmetric positive definite matrix.
pub fn spd_inverse_logdet(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let chol = cholesky(m)?;
    let l = chol.l();
    let mut logdet = 0.0;
    for i in 0..l.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        logdet += 2.0 * d.ln();
    }
    Some((chol.inverse(), logdet))
}

/// Block-diagonal assembly of square or rectangular blocks.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}
