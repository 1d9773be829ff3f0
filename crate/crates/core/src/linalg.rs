//! Dense symmetric-matrix helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor below which a symmetric matrix is treated as
/// singular.
pub const PD_RTOL: f64 = 1e-12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Eigendecomposition with eigenvalues sorted ascending.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(m.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// `U diag(f(lambda)) U'` for a symmetric matrix.
pub fn spectral_map<F: Fn(f64) -> f64>(
    values: &DVector<f64>,
    vectors: &DMatrix<f64>,
    f: F,
) -> DMatrix<f64> {
    let mut scaled = vectors.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(values[k]);
    }
    symmetrize(&(scaled * vectors.transpose()))
}

fn check_pd(values: &DVector<f64>, what: &str) -> Result<()> {
    let max = values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > PD_RTOL * max) || !min.is_finite() {
        return Err(Error::NotPositiveDefinite(format!(
            "{what}: smallest eigenvalue {min:e} (largest {max:e})"
        )));
    }
    Ok(())
}

/// Symmetric square root of a positive definite matrix.
pub fn sqrt_pd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let (values, vectors) = sorted_eigen(m);
    check_pd(&values, what)?;
    Ok(spectral_map(&values, &vectors, f64::sqrt))
}

/// Symmetric inverse square root of a positive definite matrix.
pub fn inv_sqrt_pd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let (values, vectors) = sorted_eigen(m);
    check_pd(&values, what)?;
    Ok(spectral_map(&values, &vectors, |v| 1.0 / v.sqrt()))
}

/// Inverse of a positive definite matrix via Cholesky.
pub fn inv_pd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let (values, _) = sorted_eigen(m);
    check_pd(&values, what)?;
    let chol = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{what}: Cholesky failed")))?;
    Ok(symmetrize(&chol.inverse()))
}

/// `log det` of a positive definite matrix.
pub fn log_det_pd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let chol = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{what}: Cholesky failed")))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix. Eigenvalues at or
/// below `tol * lambda_max` count as zero. Returns the inverse and the rank.
pub fn pinv_sym(m: &DMatrix<f64>, tol: f64) -> (DMatrix<f64>, usize) {
    let (values, vectors) = sorted_eigen(m);
    let cut = tol * values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let rank = values.iter().filter(|&&v| v > cut).count();
    let pinv = spectral_map(&values, &vectors, |v| if v > cut { 1.0 / v } else { 0.0 });
    (pinv, rank)
}

/// Solve `A X = B` for symmetric positive definite `A`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let (values, _) = sorted_eigen(a);
    check_pd(&values, what)?;
    let chol = symmetrize(a)
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{what}: Cholesky failed")))?;
    Ok(chol.solve(b))
}

/// Quadratic form `v' A v`.
pub fn quad_form(a: &DMatrix<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for r in 0..n {
        let mut row = 0.0;
        for c in 0..n {
            row += a[(r, c)] * v[c];
        }
        acc += v[r] * row;
    }
    acc
}

/// Median of a slice (average of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m == 0 {
        return f64::NAN;
    }
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_and_inverse_agree() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = sqrt_pd(&a, "a").unwrap();
        assert!(max_abs(&(&s * &s - &a)) < 1e-12);
        let is = inv_sqrt_pd(&a, "a").unwrap();
        let inv = inv_pd(&a, "a").unwrap();
        assert!(max_abs(&(&is * &is - &inv)) < 1e-12);
        assert!((log_det_pd(&a, "a").unwrap() - 11.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(sqrt_pd(&a, "a"), Err(Error::NotPositiveDefinite(_))));
        let (p, rank) = pinv_sym(&a, 1e-10);
        assert_eq!(rank, 1);
        assert!(max_abs(&(&a * &p * &a - &a)) < 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
