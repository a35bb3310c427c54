mod common;

use common::*;
use dualspace_core::density::{
    apply_whitener, fit_gaussian, fit_gmm, fit_gmm_with, fit_whitener, gaussian_log_likelihood, gmm_log_likelihood,
    knn_score, retained_dimension, GaussianModel, GmmConfig,
};
use dualspace_core::FeatureMatrix;
use ndarray::{array, Array2, Axis};

fn fm(x: Array2<f64>) -> FeatureMatrix {
    FeatureMatrix::from_array(x).unwrap()
}

#[test]
fn log_density_matches_explicit_inverse() {
    let train = correlated(100, 3, 1);
    let test = correlated(100, 3, 2) + normal_matrix(100, 3, 3);
    let model = fit_gaussian(&fm(train.clone()), 1e-6).unwrap();
    let (mean, mut cov) = covariance(train.view());
    for i in 0..3 {
        cov[[i, i]] += 1e-6;
    }
    let want = explicit_log_density(test.view(), &mean, &cov);
    let got = gaussian_log_likelihood(&model, &fm(test)).unwrap();
    for (g, w) in got.values.iter().zip(&want) {
        assert!((g - w).abs() <= 1e-8, "{g} vs {w}");
    }
}

#[test]
fn standard_normal_at_origin() {
    let m = GaussianModel::standard(2).unwrap();
    let v = m.log_density(array![[0.0, 0.0]].view()).unwrap()[0];
    assert!((v + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
}

#[test]
fn density_integrates_to_one() {
    let train = correlated(200, 2, 4);
    let model = fit_gaussian(&fm(train), 1e-6).unwrap();
    let mean = model.mean().clone();
    let sd: Vec<f64> = (0..2).map(|i| model.covariance()[[i, i]].sqrt()).collect();
    let steps = 400;
    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..2).map(|i| (mean[i] - 9.0 * sd[i], mean[i] + 9.0 * sd[i])).unzip();
    let h: Vec<f64> = (0..2).map(|i| (hi[i] - lo[i]) / steps as f64).collect();
    let mut grid = Array2::zeros((steps * steps, 2));
    for a in 0..steps {
        for b in 0..steps {
            grid[[a * steps + b, 0]] = lo[0] + (a as f64 + 0.5) * h[0];
            grid[[a * steps + b, 1]] = lo[1] + (b as f64 + 0.5) * h[1];
        }
    }
    let total: f64 = model.log_density(grid.view()).unwrap().mapv(f64::exp).sum() * h[0] * h[1];
    assert!((total - 1.0).abs() < 1e-6, "integral {total}");
}

#[test]
fn whitened_training_covariance_is_identity() {
    let train = correlated(300, 6, 5);
    let w = fit_whitener(&fm(train.clone()), 1.0).unwrap();
    let z = apply_whitener(&w, &fm(train)).unwrap();
    let (mean, cov) = covariance(z.values());
    assert!(mean.iter().all(|v| v.abs() < 1e-10));
    let dev = &cov - &Array2::<f64>::eye(cov.nrows());
    assert!(max_abs(&dev) <= 1e-4, "max deviation {}", max_abs(&dev));
}

#[test]
fn whitening_agrees_with_jacobi_oracle() {
    let train = correlated(50, 5, 6);
    let (_, cov) = covariance(train.view());
    let (vals, vecs) = jacobi_eigen(&cov);
    for thr in [0.5, 0.8, 0.9, 0.95, 1.0] {
        let w = fit_whitener(&fm(train.clone()), thr).unwrap();
        let r = retained_dimension(&vals, thr);
        assert_eq!(w.output_dim(), r, "threshold {thr}");
        for k in 0..r {
            assert!((w.eigenvalues[k] - vals[k]).abs() < 1e-9 * vals[0]);
            // Projection column k is v_k / sqrt(lambda_k), up to sign.
            let col = w.projection.column(k).mapv(|v| v * vals[k].sqrt());
            let dot = col.dot(&vecs.column(k));
            assert!((dot.abs() - 1.0).abs() < 1e-8, "column {k} dot {dot}");
        }
    }
}

#[test]
fn retained_dimension_is_minimal() {
    let eigs = [5.0, 3.0, 1.5, 0.5];
    assert_eq!(retained_dimension(&eigs, 0.5), 1);
    assert_eq!(retained_dimension(&eigs, 0.8), 2);
    assert_eq!(retained_dimension(&eigs, 0.95), 3);
    assert_eq!(retained_dimension(&eigs, 0.951), 4);
    assert_eq!(retained_dimension(&eigs, 1.0), 4);
}

#[test]
fn whitening_rejects_bad_thresholds() {
    let x = fm(correlated(20, 3, 7));
    for t in [0.0, -0.1, 1.01, f64::NAN] {
        assert!(fit_whitener(&x, t).is_err());
    }
}

#[test]
fn gmm_with_one_component_is_the_gaussian() {
    let train = fm(correlated(150, 4, 8));
    let test = fm(correlated(60, 4, 9));
    let g = gaussian_log_likelihood(&fit_gaussian(&train, 1e-6).unwrap(), &test).unwrap();
    let m = gmm_log_likelihood(&fit_gmm(&train, 1, 3).unwrap(), &test).unwrap();
    for (a, b) in g.values.iter().zip(&m.values) {
        assert!((a - b).abs() <= 1e-8);
    }
}

fn two_clusters(n: usize, seed: u64) -> (Array2<f64>, [[f64; 2]; 2]) {
    let centers = [[0.0, 0.0], [10.0, 10.0]];
    let mut x = normal_matrix(2 * n, 2, seed);
    for (i, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
        let c = centers[i % 2];
        row[0] += c[0];
        row[1] += c[1];
    }
    (x, centers)
}

#[test]
fn gmm_recovers_separated_cluster_means() {
    let (x, centers) = two_clusters(1000, 10);
    let model = fit_gmm(&fm(x), 2, 0).unwrap();
    assert_eq!(model.k(), 2);
    for c in centers {
        let best = model
            .components
            .iter()
            .map(|k| ((k.gaussian.mean()[0] - c[0]).powi(2) + (k.gaussian.mean()[1] - c[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.1, "nearest mean {best} from {c:?}");
    }
    let wsum: f64 = model.components.iter().map(|c| c.weight).sum();
    assert!((wsum - 1.0).abs() < 1e-12);
}

#[test]
fn em_objective_never_decreases() {
    for seed in 0..5 {
        let x = correlated(120, 3, 20 + seed);
        let cfg = GmmConfig {
            k: 3,
            max_iter: 100,
            tol: 0.0,
            reg_lambda: 1e-3,
            seed,
        };
        let model = fit_gmm_with(&fm(x), &cfg).unwrap();
        for w in model.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn knn_matches_brute_force() {
    let train = normal_matrix(40, 3, 30);
    let test = normal_matrix(10, 3, 31);
    let k = 4;
    let got = knn_score(&fm(train.clone()), &fm(test.clone()), k).unwrap();
    for (i, q) in test.outer_iter().enumerate() {
        let mut d: Vec<f64> = train.outer_iter().map(|t| (&t - &q).mapv(|v| v * v).sum().sqrt()).collect();
        d.sort_by(f64::total_cmp);
        let want = -d[..k].iter().sum::<f64>() / k as f64;
        assert!((got.values[i] - want).abs() < 1e-12);
    }
    assert!(knn_score(&fm(train.clone()), &fm(test.clone()), 0).is_err());
    assert!(knn_score(&fm(train), &fm(test), 41).is_err());
}

#[test]
fn singular_covariance_is_regularized() {
    let mut x = normal_matrix(30, 3, 40);
    let c0 = x.column(0).to_owned();
    x.column_mut(2).assign(&c0);
    let m = fit_gaussian(&fm(x.clone()), 0.0).unwrap();
    assert!(m.reg_lambda() > 0.0);
    assert!(m.log_density(x.view()).unwrap().iter().all(|v| v.is_finite()));
}
