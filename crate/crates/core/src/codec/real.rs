//! Small real-valued helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, RowDVector};

/// `[c; c m; ...; c m^(n-1)]`.
pub fn observability(m: &DMatrix<f64>, c: &RowDVector<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, m.ncols());
    let mut row = c.clone();
    for i in 0..n {
        out.set_row(i, &row);
        row = &row * m;
    }
    out
}

/// `[b, m b, ..., m^(n-1) b]`.
pub fn controllability(m: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for j in 0..n {
        out.set_column(j, &col);
        col = m * &col;
    }
    out
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    m.clone().svd(false, false).singular_values.iter().copied().collect()
}

/// Number of singular values above `tol`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    singular_values(m).into_iter().filter(|&s| s > tol).count()
}

/// Smallest singular value of a square matrix.
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    singular_values(m).into_iter().fold(f64::INFINITY, f64::min)
}

pub fn eigenvalue_moduli(m: &DMatrix<f64>) -> Vec<f64> {
    m.complex_eigenvalues().iter().map(|z| z.norm()).collect()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigenvalue_moduli(m).into_iter().fold(0.0, f64::max)
}

/// `m^n + c[n-1] m^(n-1) + ... + c[0] I` for monic coefficients `c` (lowest first).
pub fn monic_poly_eval(m: &DMatrix<f64>, coeffs: &[f64]) -> DMatrix<f64> {
    let n = m.nrows();
    // Horner: ((I m + c[n-1]) m + c[n-2]) ...
    let mut acc = DMatrix::identity(n, n);
    for &c in coeffs.iter().rev() {
        acc = &acc * m + DMatrix::identity(n, n) * c;
    }
    acc
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a: f64, &b| a.max(b.abs()))
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return None;
    }
    Some(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_and_rank() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        // char poly l^2 + 3l + 2; Cayley-Hamilton
        assert!(max_abs(&monic_poly_eval(&m, &[2.0, 3.0])) < 1e-12);
        let c = RowDVector::from_row_slice(&[1.0, 0.0]);
        assert_eq!(numerical_rank(&observability(&m, &c), 1e-8), 2);
        let c = RowDVector::from_row_slice(&[0.0, 0.0]);
        assert_eq!(numerical_rank(&observability(&m, &c), 1e-8), 0);
        let mut radius = eigenvalue_moduli(&m);
        radius.sort_by(f64::total_cmp);
        assert!((radius[0] - 1.0).abs() < 1e-12 && (radius[1] - 2.0).abs() < 1e-12);
    }
}
