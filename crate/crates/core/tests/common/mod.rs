//! Independent reference implementations used as test oracles. Nothing here
//! calls into the crate's own linear algebra.
#![allow(dead_code)]

use dualspace_core::seed::rng;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal_matrix(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_simple_fn((n, d), || r.sample(StandardNormal))
}

/// Rows of `normal_matrix` pushed through a fixed mixing matrix.
pub fn correlated(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let z = normal_matrix(n, d, seed);
    let mix = normal_matrix(d, d, seed ^ 0xabc) * 0.7 + Array2::<f64>::eye(d);
    z.dot(&mix) + 3.0
}

/// Unbiased sample covariance by explicit double loop.
pub fn covariance(x: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let (n, d) = x.dim();
    let mean = x.mean_axis(Axis(0)).unwrap();
    let mut c = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..n {
                s += (x[[k, i]] - mean[i]) * (x[[k, j]] - mean[j]);
            }
            c[[i, j]] = s / (n as f64 - 1.0);
        }
    }
    (mean, c)
}

/// Gauss-Jordan inverse with partial pivoting, plus the determinant.
pub fn inverse_and_det(a: &Array2<f64>) -> (Array2<f64>, f64) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = Array2::<f64>::eye(n);
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs()))
            .unwrap();
        if piv != col {
            for k in 0..n {
                m.swap([piv, k], [col, k]);
                inv.swap([piv, k], [col, k]);
            }
            det = -det;
        }
        let p = m[[col, col]];
        det *= p;
        for k in 0..n {
            m[[col, k]] /= p;
            inv[[col, k]] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = m[[i, col]];
                for k in 0..n {
                    m[[i, k]] -= f * m[[col, k]];
                    inv[[i, k]] -= f * inv[[col, k]];
                }
            }
        }
    }
    (inv, det)
}

/// Log-density by the explicit-inverse closed form.
pub fn explicit_log_density(x: ArrayView2<f64>, mean: &Array1<f64>, cov: &Array2<f64>) -> Array1<f64> {
    let d = mean.len() as f64;
    let (inv, det) = inverse_and_det(cov);
    x.outer_iter()
        .map(|row| {
            let c = &row - mean;
            let q = c.dot(&inv.dot(&c));
            -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + det.ln() + q)
        })
        .collect()
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Eigenvalues
/// descending; eigenvectors are the columns of the returned matrix.
pub fn jacobi_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[[k, p]], m[[k, q]]);
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[[p, k]], m[[q, k]]);
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].total_cmp(&m[[i, i]]));
    let vals = order.iter().map(|&i| m[[i, i]]).collect();
    let vecs = v.select(Axis(1), &order);
    (vals, vecs)
}

/// Pair counting with half credit for ties; anomalies should score lower.
pub fn brute_auroc(scores: &[f64], anomaly: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if anomaly[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if !anomaly[j] {
                continue;
            }
            den += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / den
}

pub fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
