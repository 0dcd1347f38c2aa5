//! Small symmetric-matrix helpers shared by the objective, estimator and
//! dynamics modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted ascending.
pub(crate) fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(k));
    }
    (values, vectors)
}

/// `V · diag(f(λ)) · Vᵀ`.
pub(crate) fn spectral_map(
    values: &DVector<f64>,
    vectors: &DMatrix<f64>,
    f: impl Fn(f64) -> f64,
) -> DMatrix<f64> {
    let mapped = DVector::from_iterator(values.len(), values.iter().map(|&l| f(l)));
    let scaled = vectors * DMatrix::from_diagonal(&mapped);
    let out = scaled * vectors.transpose();
    symmetrize(out)
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Principal square root of a symmetric positive semidefinite matrix.
///
/// Eigenvalues in `[-rel_tol·λ_max, 0)` are clamped to zero; anything more
/// negative is rejected.
pub(crate) fn psd_sqrt(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if n <= 2 {
        return small_psd_sqrt(m, rel_tol);
    }
    let (values, vectors) = sym_eigen(m);
    let scale = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let lambda_max = values[n - 1].max(0.0);
    let lambda_min = values[0];
    if lambda_min < -rel_tol * lambda_max.max(f64::MIN_POSITIVE) {
        return Err(Error::Domain(format!(
            "matrix is not positive semidefinite (eigenvalue {lambda_min:e}, largest {lambda_max:e})"
        )));
    }
    Ok(spectral_map(&values, &vectors, |l| l.max(0.0).sqrt()))
}

/// Closed forms for 1×1 and 2×2; the Monte Carlo inner loops live here.
/// For 2×2 PSD `M`, `√M = (M + sI)/t` with `s = √det M`, `t = √(tr M + 2s)`.
fn small_psd_sqrt(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let not_psd = |lmin: f64, lmax: f64| {
        Error::Domain(format!(
            "matrix is not positive semidefinite (eigenvalue {lmin:e}, largest {lmax:e})"
        ))
    };
    if m.nrows() == 1 {
        let v = m[(0, 0)];
        if v < 0.0 {
            return Err(not_psd(v, v));
        }
        return Ok(DMatrix::from_element(1, 1, v.sqrt()));
    }
    let (a, b, c) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
    let tr = a + c;
    let det = a * c - b * b;
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let lmax = 0.5 * tr + disc;
    let lmin = 0.5 * tr - disc;
    if lmax <= 0.0 {
        if lmax == 0.0 && lmin == 0.0 {
            return Ok(DMatrix::zeros(2, 2));
        }
        return Err(not_psd(lmin, lmax));
    }
    if lmin < -rel_tol * lmax {
        return Err(not_psd(lmin, lmax));
    }
    if lmin < 0.0 {
        let (values, vectors) = sym_eigen(m);
        return Ok(spectral_map(&values, &vectors, |l| l.max(0.0).sqrt()));
    }
    let s = det.max(0.0).sqrt();
    let t = (tr + 2.0 * s).sqrt();
    Ok(DMatrix::from_row_slice(2, 2, &[(a + s) / t, b / t, b / t, (c + s) / t]))
}
