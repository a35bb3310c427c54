mod common;

use common::brute_auroc;
use dualspace_core::benchmark::{auroc_values, blob_vectors, make_split, BlobVectorConfig, Setting};
use dualspace_core::seed::rng;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn rank_auroc_equals_pair_counting_exactly() {
    let mut r = rng(77);
    let mut checked = 0;
    while checked < 200 {
        let n = r.random_range(2..=50);
        // Few distinct values so ties are common.
        let levels = r.random_range(1..=8);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 * 0.5).collect();
        let labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        if labels.iter().all(|&a| a) || labels.iter().all(|&a| !a) {
            continue;
        }
        assert_eq!(auroc_values(&scores, &labels).unwrap(), brute_auroc(&scores, &labels));
        checked += 1;
    }
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-5i32..5, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
            prop::collection::vec(any::<bool>(), n),
        )
    })
    .prop_filter("both classes", |(_, l)| l.iter().any(|&a| a) && l.iter().any(|&a| !a))
}

proptest! {
    #[test]
    fn auroc_in_unit_interval((s, l) in scored_labels()) {
        let a = auroc_values(&s, &l).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn auroc_invariant_under_increasing_maps((s, l) in scored_labels()) {
        let t: Vec<f64> = s.iter().map(|v| (v * 0.3).exp() * 7.0 - 2.0).collect();
        prop_assert_eq!(auroc_values(&s, &l).unwrap(), auroc_values(&t, &l).unwrap());
    }

    #[test]
    fn flipping_labels_complements((s, l) in scored_labels()) {
        let flipped: Vec<bool> = l.iter().map(|a| !a).collect();
        let a = auroc_values(&s, &l).unwrap();
        let b = auroc_values(&s, &flipped).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negating_scores_complements((s, l) in scored_labels()) {
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let a = auroc_values(&s, &l).unwrap();
        let b = auroc_values(&neg, &l).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }
}

fn four_class() -> dualspace_core::benchmark::Dataset {
    blob_vectors(&BlobVectorConfig {
        train_per_class: 20,
        test_per_class: 10,
        ..BlobVectorConfig::default()
    })
    .unwrap()
}

#[test]
fn unimodal_split_by_exhaustive_scan() {
    let ds = four_class();
    let s = make_split(&ds, Setting::Unimodal, 2).unwrap();
    let labels = ds.train_labels();
    let expected: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 2).collect();
    assert_eq!(s.train_indices, expected);
    assert_eq!(s.test_indices, (0..ds.test.len()).collect::<Vec<_>>());
    for (k, &i) in s.test_indices.iter().enumerate() {
        assert_eq!(s.anomaly_labels[k], ds.test_labels()[i] != 2);
    }
    assert_eq!(s.train_ids.len(), s.train_indices.len());
}

#[test]
fn multimodal_split_by_exhaustive_scan() {
    let ds = four_class();
    let s = make_split(&ds, Setting::Multimodal, 3).unwrap();
    assert!(s.train_indices.iter().all(|&i| ds.train_labels()[i] != 3));
    assert_eq!(s.train_indices.len(), 60);
    for (k, &i) in s.test_indices.iter().enumerate() {
        assert_eq!(s.anomaly_labels[k], ds.test_labels()[i] == 3);
    }
    assert!((s.anomaly_fraction() - 0.25).abs() < 1e-12);
}

#[test]
fn settings_are_complementary() {
    let ds = four_class();
    for c in 0..4 {
        let u = make_split(&ds, Setting::Unimodal, c).unwrap();
        let m = make_split(&ds, Setting::Multimodal, c).unwrap();
        let mut all = u.train_indices.clone();
        all.extend(&m.train_indices);
        all.sort();
        assert_eq!(all, (0..ds.train.len()).collect::<Vec<_>>());
        assert_eq!(u.test_indices, m.test_indices);
        assert!(u.anomaly_labels.iter().zip(&m.anomaly_labels).all(|(a, b)| a != b));
    }
}

#[test]
fn out_of_range_pivot_is_rejected() {
    assert!(make_split(&four_class(), Setting::Unimodal, 4).is_err());
}
