//! Thin bridge to nalgebra for the dense symmetric routines.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

pub(crate) fn to_na(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Column means and the unbiased (`n - 1`) sample covariance.
pub(crate) fn mean_and_covariance(x: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = x.nrows();
    let mean = x.mean_axis(Axis(0)).expect("n >= 1");
    let centered = &x - &mean;
    let mut cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    symmetrize(&mut cov);
    (mean, cov)
}

pub(crate) fn symmetrize(a: &mut Array2<f64>) {
    let d = a.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
/// Each eigenvector is signed so its largest-magnitude entry is positive.
pub(crate) fn sym_eigen(a: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let eig = SymmetricEigen::new(to_na(a));
    let d = a.nrows();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let values = Array1::from_iter(order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Array2::zeros((d, d));
    for (c, &i) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(i);
        let pivot = (0..d)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0);
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            vectors[[r, c]] = sign * col[r];
        }
    }
    (values, vectors)
}

/// Lower Cholesky factor, or `None` when the matrix is not numerically
/// positive definite.
pub(crate) fn cholesky(a: ArrayView2<f64>) -> Option<Array2<f64>> {
    let chol = to_na(a).cholesky()?;
    let l = chol.l();
    let ok = (0..l.nrows()).all(|i| l[(i, i)].is_finite() && l[(i, i)] > 0.0);
    ok.then(|| from_na(&l))
}

/// Solves `L Z^T = X^T` for every row of `x`, returning `Z` (`n x d`).
pub(crate) fn solve_lower_rows(l: &DMatrix<f64>, x: ArrayView2<f64>) -> Array2<f64> {
    let rhs = to_na(x.t());
    let z = l.solve_lower_triangular(&rhs).expect("nonsingular factor");
    from_na(&z.transpose())
}

pub(crate) fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}
