use ndarray::Array1;
use rayon::prelude::*;

use super::linalg::sq_dist;
use crate::error::{ensure_dim, Error, Result};
use crate::features::{FeatureMatrix, ScoreVector};

/// Negative mean Euclidean distance to the `k` nearest training rows
/// (brute force). Higher is more normal.
pub fn knn_score(train: &FeatureMatrix, test: &FeatureMatrix, k: usize) -> Result<ScoreVector> {
    let n = train.nrows();
    if k == 0 || k > n {
        return Err(Error::config(format!("kNN needs 1 <= k <= {n}, got k={k}")));
    }
    ensure_dim(train.ncols(), test.ncols(), "kNN query columns")?;
    let tr = train.values();
    let te = test.values();
    let scores: Vec<f64> = (0..te.nrows())
        .into_par_iter()
        .map(|i| {
            let q = te.row(i);
            let mut d: Vec<f64> = (0..n).map(|j| sq_dist(q, tr.row(j)).sqrt()).collect();
            if k < n {
                d.select_nth_unstable_by(k - 1, f64::total_cmp);
            }
            let mut nearest = d[..k].to_vec();
            nearest.sort_by(f64::total_cmp);
            -(nearest.iter().sum::<f64>() / k as f64)
        })
        .collect();
    ScoreVector::new(Array1::from(scores), test.space())
}
