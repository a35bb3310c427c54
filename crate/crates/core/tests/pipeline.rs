mod common;

use dualspace_core::backbone::{Backbone, BackboneSpec, FeatureCache, VisionTransformer};
use dualspace_core::benchmark::{
    ablation_runner, auroc_values, blob_centers, blob_images, blob_vectors, make_split,
    reports_to_csv, run_experiment, spectral, BlobImageConfig, BlobVectorConfig, Experiment, PipelineConfig,
    Setting, SpectralConfig, Variant,
};
use dualspace_core::density::retained_dimension;
use dualspace_core::distillation::TrainConfig;
use ndarray::{Array1, Array2};

fn vectors() -> (dualspace_core::benchmark::Dataset, BlobVectorConfig) {
    let cfg = BlobVectorConfig::default();
    (blob_vectors(&cfg).unwrap(), cfg)
}

/// Score of the true generating density: unit-covariance Gaussians at the centers.
fn mahalanobis_oracle_auroc(setting: Setting, pivot: usize) -> f64 {
    let (ds, cfg) = vectors();
    let centers = blob_centers(&cfg);
    let split = make_split(&ds, setting, pivot).unwrap();
    let normal: Vec<usize> = (0..cfg.num_classes)
        .filter(|&c| match setting {
            Setting::Unimodal => c == pivot,
            Setting::Multimodal => c != pivot,
        })
        .collect();
    let px = ds.test.pixels();
    let scores: Vec<f64> = split
        .test_indices
        .iter()
        .map(|&i| {
            let x = Array1::from_iter((0..cfg.dim).map(|j| px[[i, 0, j, 0]]));
            normal
                .iter()
                .map(|&c| -(&x - &centers.row(c)).mapv(|v| v * v).sum())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    auroc_values(&scores, &split.anomaly_labels).unwrap()
}

#[test]
fn identity_features_on_blobs_reach_high_auroc() {
    let (ds, _) = vectors();
    let v: Variant = "pretrained:gaussian:0.90".parse().unwrap();
    for setting in [Setting::Unimodal, Setting::Multimodal] {
        for c in 0..4 {
            assert!(mahalanobis_oracle_auroc(setting, c) >= 0.95, "generator not separable");
        }
        let r = run_experiment(&ds, &Backbone::Identity, setting, &PipelineConfig::default(), &v, 1, 0).unwrap();
        assert!(r.mean_auroc >= 0.95, "{setting}: {}", r.mean_auroc);
        assert_eq!(r.per_class_auroc.len(), 4);
    }
}

#[test]
fn identity_backbone_refuses_finetuned_features() {
    let (ds, _) = vectors();
    let v = Variant::full();
    let pipeline = PipelineConfig::default();
    assert!(run_experiment(&ds, &Backbone::Identity, Setting::Unimodal, &pipeline, &v, 1, 0).is_err());
}

#[test]
fn energy_thresholds_match_generator_spectrum() {
    let cfg = SpectralConfig::default();
    let ds = spectral(&cfg).unwrap();
    let mut seen = Vec::new();
    for e in [0.85, 0.90, 0.95] {
        let v: Variant = format!("pretrained:gaussian:{e}").parse().unwrap();
        let r = run_experiment(&ds, &Backbone::Identity, Setting::Unimodal, &PipelineConfig::default(), &v, 1, 0)
            .unwrap();
        let want = retained_dimension(&cfg.spectrum, e);
        for (&c, &got) in &r.retained_dims {
            assert_eq!(got, want, "class {c} at energy {e}");
        }
        seen.push(want);
    }
    seen.dedup();
    assert_eq!(seen.len(), 3, "thresholds should retain different dimensions");
}

fn small_images() -> dualspace_core::benchmark::Dataset {
    blob_images(&BlobImageConfig {
        train_per_class: 24,
        test_per_class: 8,
        ..BlobImageConfig::default()
    })
    .unwrap()
}

fn quick() -> PipelineConfig {
    PipelineConfig {
        train: TrainConfig {
            epochs: 2,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        },
        pivots: Some(vec![0, 2]),
        ..PipelineConfig::default()
    }
}

fn mock() -> Backbone {
    Backbone::Vit(Box::new(VisionTransformer::mock(BackboneSpec::mock(), 0).unwrap()))
}

#[test]
fn runs_are_deterministic_and_report_one_row_per_pivot_and_variant() {
    let ds = small_images();
    let bb = mock();
    let variants: Vec<Variant> = ["pretrained", "finetuned-m5", "combined-m5:knn2:0.95"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let a = ablation_runner(&ds, &bb, Setting::Multimodal, &quick(), &variants, 2, 11).unwrap();
    let b = ablation_runner(&ds, &bb, Setting::Multimodal, &quick(), &variants, 2, 11).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let csv = reports_to_csv(&a.rows);
    assert_eq!(csv.lines().count(), 1 + 2 * variants.len());
    for r in &a.rows {
        assert_eq!(r.trials.len(), 2);
        assert!(r.std_across_trials >= 0.0);
    }
    assert_eq!(a.rows[1].block_indices, vec![7, 8, 9, 10, 11]);
}

#[test]
fn warm_cache_gives_identical_reports() {
    let ds = small_images();
    let bb = mock();
    let dir = tempfile::tempdir().unwrap();
    let cache = FeatureCache::new(dir.path());
    let v = ["combined-m3".parse().unwrap()];
    let cold = Experiment::prepare(&ds, &bb, Some(&cache)).unwrap();
    let warm = Experiment::prepare(&ds, &bb, Some(&cache)).unwrap();
    assert_eq!(cold.train, warm.train);
    let a = cold.run(Setting::Unimodal, &quick(), &v, 1, 0).unwrap();
    let b = warm.run(Setting::Unimodal, &quick(), &v, 1, 0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn combined_score_is_the_sum_of_both_spaces() {
    let ds = small_images();
    let bb = mock();
    let exp = Experiment::prepare(&ds, &bb, None).unwrap();
    let split = make_split(&ds, Setting::Unimodal, 1).unwrap();
    let variants: Vec<Variant> = ["pretrained", "finetuned-m4", "combined-m4"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let s = exp.score_split(&split, &quick(), &variants, 3).unwrap();
    let sum: Array2<f64> = Array2::from_shape_fn((s[0].len(), 1), |(i, _)| s[0].values[i] + s[1].values[i]);
    for i in 0..s[2].len() {
        assert!((s[2].values[i] - sum[[i, 0]]).abs() < 1e-9 * sum[[i, 0]].abs().max(1.0));
    }
}
