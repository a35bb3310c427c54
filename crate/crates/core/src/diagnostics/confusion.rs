use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::linalg::{mean_and_covariance, sq_dist, sym_eigen};
use crate::error::{ensure_dim, Error, Result};
use crate::features::FeatureMatrix;

pub const DEFAULT_FLAG_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedPair {
    pub class_a: usize,
    pub class_b: usize,
    pub confusion: f64,
}

/// Class-pair confusion measured by leave-one-out nearest-neighbor voting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    /// Distinct labels, ascending; matrix rows and columns follow this order.
    pub classes: Vec<usize>,
    /// Entry `(a, b)`: fraction of class-`a` samples whose nearest other
    /// sample belongs to class `b`. Rows sum to 1.
    pub directed: Array2<f64>,
    /// `(directed + directed^T) / 2`.
    pub pairwise_confusion: Array2<f64>,
    pub flagged_pairs: Vec<FlaggedPair>,
    /// `n x 2` principal-component coordinates.
    pub projection_coords: Array2<f64>,
    pub threshold: f64,
}

impl ConfusionReport {
    pub fn is_flagged(&self, a: usize, b: usize) -> bool {
        self.flagged_pairs
            .iter()
            .any(|p| (p.class_a, p.class_b) == (a.min(b), a.max(b)))
    }
}

/// Index of the nearest other row (ties to the lowest index).
pub(crate) fn nearest_other(x: ArrayView2<f64>, i: usize) -> usize {
    let mut best = (f64::INFINITY, usize::MAX);
    for j in 0..x.nrows() {
        if j != i {
            let d = sq_dist(x.row(i), x.row(j));
            if d < best.0 {
                best = (d, j);
            }
        }
    }
    best.1
}

/// Projection onto the two leading principal components (zero-padded when
/// the features have a single column).
pub fn pca_2d(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    if n < 2 {
        return Array2::zeros((n, 2));
    }
    let (mean, cov) = mean_and_covariance(x);
    let (_, vecs) = sym_eigen(cov.view());
    let k = vecs.ncols().min(2);
    let proj = (&x - &mean).dot(&vecs.slice(ndarray::s![.., ..k]));
    let mut out = Array2::zeros((n, 2));
    out.slice_mut(ndarray::s![.., ..k]).assign(&proj);
    out
}

pub fn confusion_report(features: &FeatureMatrix, labels: &[usize], flag_threshold: f64) -> Result<ConfusionReport> {
    ensure_dim(features.nrows(), labels.len(), "labels for confusion report")?;
    if !(0.0..=1.0).contains(&flag_threshold) {
        return Err(Error::config(format!("flag threshold {flag_threshold} outside [0, 1]")));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid("confusion report needs at least two classes"));
    }
    let pos = |l: usize| classes.binary_search(&l).expect("label present");
    let mut counts = vec![0usize; classes.len()];
    labels.iter().for_each(|&l| counts[pos(l)] += 1);
    if let Some(c) = counts.iter().position(|&c| c < 2) {
        return Err(Error::invalid(format!("class {} has fewer than two samples", classes[c])));
    }

    let x = features.values();
    let nn: Vec<usize> = (0..x.nrows()).into_par_iter().map(|i| nearest_other(x, i)).collect();
    let c = classes.len();
    let mut directed = Array2::<f64>::zeros((c, c));
    for (i, &j) in nn.iter().enumerate() {
        directed[[pos(labels[i]), pos(labels[j])]] += 1.0;
    }
    for (mut row, &n) in directed.axis_iter_mut(Axis(0)).zip(&counts) {
        row /= n as f64;
    }
    let pairwise = (&directed + &directed.t()) / 2.0;
    let mut flagged_pairs = Vec::new();
    for a in 0..c {
        for b in (a + 1)..c {
            if pairwise[[a, b]] >= flag_threshold {
                flagged_pairs.push(FlaggedPair {
                    class_a: classes[a],
                    class_b: classes[b],
                    confusion: pairwise[[a, b]],
                });
            }
        }
    }
    Ok(ConfusionReport {
        classes,
        directed,
        pairwise_confusion: pairwise,
        flagged_pairs,
        projection_coords: pca_2d(x),
        threshold: flag_threshold,
    })
}
