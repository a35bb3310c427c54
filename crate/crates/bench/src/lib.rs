//! Shared fixtures for the criterion benches.

use dualspace_core::backbone::{BackboneSpec, HiddenStates, ImageBatch, VisionTransformer};
use dualspace_core::seed::rng;
use dualspace_core::FeatureMatrix;
use ndarray::{Array2, Array4};
use rand::Rng;
use rand_distr::StandardNormal;

/// `n x d` standard normal matrix with a few correlated columns.
pub fn correlated_matrix(n: usize, d: usize, seed: u64) -> FeatureMatrix {
    let mut r = rng(seed);
    let mut x = Array2::from_shape_simple_fn((n, d), || r.sample::<f64, _>(StandardNormal));
    for j in 1..d {
        let prev = x.column(j - 1).to_owned();
        x.column_mut(j).scaled_add(0.5, &prev);
    }
    FeatureMatrix::from_array(x).expect("finite")
}

pub fn scores_and_labels(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut r = rng(seed);
    let labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.3)).collect();
    let scores = labels
        .iter()
        .map(|&a| r.sample::<f64, _>(StandardNormal) + if a { 1.0 } else { 0.0 })
        .collect();
    (scores, labels)
}

pub fn mock_teacher() -> VisionTransformer {
    VisionTransformer::mock(BackboneSpec::mock(), 0).expect("mock spec is valid")
}

pub fn random_images(n: usize, seed: u64) -> ImageBatch {
    let mut r = rng(seed);
    let px = Array4::from_shape_simple_fn((n, 32, 32, 3), || r.random::<f64>());
    ImageBatch::with_sequential_ids(px, None, "bench").expect("valid batch")
}

pub fn mock_states(n: usize) -> (VisionTransformer, HiddenStates) {
    let t = mock_teacher();
    let s = t.hidden_states(&random_images(n, 1)).expect("forward");
    (t, s)
}
