//! Small dense-matrix helpers bridging `ndarray` data to `nalgebra`
//! factorizations. Everything here operates on small (<= ~16 dim)
//! square-ish matrices; sample matrices stay in `ndarray`.

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::rng::Prng;
use rand_distr::{Distribution, StandardNormal};

pub fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn to_nd(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// 2-norm condition number via SVD; `inf` for singular input.
pub fn condition_number(a: &Array2<f64>) -> f64 {
    let svd = to_na(a).svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn inverse(a: &Array2<f64>) -> Result<Array2<f64>> {
    to_na(a)
        .try_inverse()
        .map(|m| to_nd(&m))
        .ok_or_else(|| Error::Numeric("matrix is not invertible".into()))
}

/// log |det A| via LU.
pub fn log_abs_det(a: &Array2<f64>) -> f64 {
    to_na(a).lu().determinant().abs().ln()
}

/// Random matrix with orthonormal rows (QR of a Gaussian draw).
/// Requires `rows <= cols`.
pub fn orthonormal_rows(rows: usize, cols: usize, rng: &mut Prng) -> Array2<f64> {
    assert!(rows <= cols);
    let g = DMatrix::from_fn(cols, rows, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let q = qr.q(); // cols x rows, orthonormal columns
    Array2::from_shape_fn((rows, cols), |(i, j)| q[(j, i)])
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
/// Returns `(values, vectors)` with eigenvectors as columns.
pub fn symmetric_eig_desc(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let eig = nalgebra::SymmetricEigen::new(to_na(a));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap()
            .then(i.cmp(&j))
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors =
        Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::array;

    #[test]
    fn condition_of_identity() {
        let i = Array2::<f64>::eye(3);
        assert!((condition_number(&i) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_round_trip() {
        let a = array![[2.0, 1.0], [0.5, 3.0]];
        let inv = inverse(&a).unwrap();
        let prod = a.dot(&inv);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn orthonormal_rows_are_orthonormal() {
        let mut rng = seeded(5);
        let w = orthonormal_rows(2, 4, &mut rng);
        let gram = w.dot(&w.t());
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn eig_desc_sorted() {
        let a = array![[1.0, 0.0], [0.0, 4.0]];
        let (vals, vecs) = symmetric_eig_desc(&a);
        assert!((vals[0] - 4.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
        // first eigenvector is e2 up to sign
        assert!((vecs[[1, 0]].abs() - 1.0).abs() < 1e-12);
    }
}
