//! Thin bridge between `ndarray` storage and `nalgebra` factorizations.

use nalgebra::{DMatrix, Schur, SymmetricEigen};
use ndarray::Array2;

pub(crate) fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue. Columns
/// of the returned matrix are the eigenvectors.
pub(crate) fn sorted_symmetric_eigen(a: &Array2<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(to_dmatrix(a));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(a.nrows(), order.len(), |i, k| {
        eig.eigenvectors[(i, order[k])]
    });
    (values, vectors)
}

/// 2-norm condition number of a symmetric matrix; infinite when singular.
pub(crate) fn symmetric_condition_number(a: &Array2<f64>) -> f64 {
    let eig = SymmetricEigen::new(to_dmatrix(a));
    let abs = eig.eigenvalues.iter().map(|v| v.abs());
    let (lo, hi) = abs.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Largest eigenvalue modulus of a general square matrix.
pub(crate) fn spectral_radius(a: &Array2<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let m = to_dmatrix(a);
    // The uncapped Schur iteration can cycle forever on some sparse patterns.
    match Schur::try_new(m.clone(), f64::EPSILON, 10_000) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
        None => gelfand_radius(m),
    }
}

/// `||A^k||^(1/k)` for `k = 2^64` by repeated normalized squaring.
fn gelfand_radius(mut m: DMatrix<f64>) -> f64 {
    let mut log_scale = 0.0;
    let mut power = 1.0;
    for _ in 0..64 {
        let norm = m.norm();
        if norm == 0.0 {
            return 0.0;
        }
        m /= norm;
        log_scale += norm.ln() / power;
        m = &m * &m;
        power *= 2.0;
    }
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (log_scale + norm.ln() / power).exp()
}

/// `log det` of a symmetric positive definite matrix, `None` otherwise.
pub(crate) fn spd_log_det(a: &Array2<f64>) -> Option<f64> {
    let chol = to_dmatrix(a).cholesky()?;
    Some(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub(crate) fn spd_inverse(a: &Array2<f64>) -> Option<Array2<f64>> {
    let chol = to_dmatrix(a).cholesky()?;
    Some(from_dmatrix(&chol.inverse()))
}
