use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gaussian::{fit_gaussian_values, regularized_model, GaussianModel, DEFAULT_REG_LAMBDA};
use super::linalg::{log_sum_exp, sq_dist, symmetrize};
use crate::archive::TensorArchive;
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, ScoreVector};
use crate::seed::rng;

/// Components whose weight falls below this are dropped.
pub const PRUNE_WEIGHT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Relative change of the objective below which EM stops.
    pub tol: f64,
    pub reg_lambda: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            k: 2,
            max_iter: 200,
            tol: 1e-10,
            reg_lambda: DEFAULT_REG_LAMBDA,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub gaussian: GaussianModel,
}

/// Mixture of full-covariance Gaussians fitted by EM.
///
/// The M-step is the MAP update `Sigma_k = (S_k + lambda I) / N_k`, so the
/// quantity EM never decreases is the penalized objective
/// `loglik - lambda/2 * sum_k tr(Sigma_k^-1)`, recorded in `objective_trace`.
/// With `k = 1` the model is exactly the single-Gaussian fit.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub components: Vec<GmmComponent>,
    pub iterations: usize,
    /// Training log-likelihood (sum over samples) of the returned parameters.
    pub final_log_likelihood: f64,
    pub objective_trace: Vec<f64>,
    pub log_likelihood_trace: Vec<f64>,
    pub pruned: usize,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].gaussian.dim()
    }

    /// Per-component `log w_k + log N(x | k)`, `n x k`.
    fn weighted_log_densities(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((x.nrows(), self.k()));
        for (mut col, c) in out.axis_iter_mut(Axis(1)).zip(&self.components) {
            let ll = c.gaussian.log_density(x)?;
            let lw = c.weight.ln();
            col.assign(&ll.mapv(|v| v + lw));
        }
        Ok(out)
    }

    pub fn log_density(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let w = self.weighted_log_densities(x)?;
        Ok(w.map_axis(Axis(1), |r| log_sum_exp(r.iter().copied())))
    }

    pub fn to_archive(&self) -> TensorArchive {
        let meta = serde_json::json!({
            "weights": self.components.iter().map(|c| c.weight).collect::<Vec<_>>(),
            "reg_lambdas": self.components.iter().map(|c| c.gaussian.reg_lambda()).collect::<Vec<_>>(),
            "iterations": self.iterations,
            "final_log_likelihood": self.final_log_likelihood,
            "objective_trace": self.objective_trace,
            "log_likelihood_trace": self.log_likelihood_trace,
            "pruned": self.pruned,
        });
        let mut a = TensorArchive::new("gmm", meta);
        for (i, c) in self.components.iter().enumerate() {
            a.push(format!("mean_{i}"), c.gaussian.mean().view().into_dyn());
            a.push(format!("covariance_{i}"), c.gaussian.covariance().view().into_dyn());
        }
        a
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self> {
        if a.kind != "gmm" {
            return Err(Error::invalid(format!("expected a GMM archive, found `{}`", a.kind)));
        }
        let m = &a.metadata;
        let vec_f64 = |key: &str| -> Result<Vec<f64>> {
            serde_json::from_value(m[key].clone()).map_err(Error::from)
        };
        let weights = vec_f64("weights")?;
        let regs = vec_f64("reg_lambdas")?;
        if weights.is_empty() || regs.len() != weights.len() {
            return Err(Error::invalid("GMM archive has inconsistent component lists"));
        }
        let mut components = Vec::new();
        for (i, (&weight, &reg)) in weights.iter().zip(&regs).enumerate() {
            let mean = crate::archive::to_array1(a.get(&format!("mean_{i}"))?, "mean")?;
            let cov = crate::archive::to_array2(a.get(&format!("covariance_{i}"))?, "covariance")?;
            components.push(GmmComponent {
                weight,
                gaussian: GaussianModel::new(mean, cov, reg)?,
            });
        }
        Ok(Self {
            components,
            iterations: m["iterations"].as_u64().unwrap_or(0) as usize,
            final_log_likelihood: m["final_log_likelihood"].as_f64().unwrap_or(f64::NAN),
            objective_trace: vec_f64("objective_trace")?,
            log_likelihood_trace: vec_f64("log_likelihood_trace")?,
            pruned: m["pruned"].as_u64().unwrap_or(0) as usize,
        })
    }
}

/// k-means++ seeding: returns `k` distinct row indices.
fn kmeans_pp(x: ArrayView2<f64>, k: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    let n = x.nrows();
    let mut centers = vec![r.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(centers[0]))).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = r.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            (0..n).find(|i| !centers.contains(i)).expect("n >= k")
        };
        centers.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(next)));
        }
    }
    centers
}

fn m_step(
    x: ArrayView2<f64>,
    resp: &Array2<f64>,
    reg_lambda: f64,
) -> Result<(Vec<GmmComponent>, usize)> {
    let n = x.nrows() as f64;
    let mut comps = Vec::new();
    let mut pruned = 0;
    for (k, rk) in resp.axis_iter(Axis(1)).enumerate() {
        let nk: f64 = rk.sum();
        if nk / n < PRUNE_WEIGHT {
            log::warn!("pruning degenerate mixture component {k} (weight {:e})", nk / n);
            pruned += 1;
            continue;
        }
        let mean = rk.dot(&x) / nk;
        let centered = &x - &mean;
        let weighted = &centered * &rk.insert_axis(Axis(1));
        let mut scatter = weighted.t().dot(&centered);
        symmetrize(&mut scatter);
        let cov = scatter / nk;
        let gaussian = regularized_model(mean, cov, reg_lambda / nk)?;
        comps.push(GmmComponent { weight: nk / n, gaussian });
    }
    if comps.is_empty() {
        return Err(Error::numerical("every mixture component degenerated"));
    }
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    comps.iter_mut().for_each(|c| c.weight /= total);
    Ok((comps, pruned))
}

fn e_step(model: &GmmModel, x: ArrayView2<f64>) -> Result<(Array2<f64>, f64)> {
    let mut w = model.weighted_log_densities(x)?;
    let mut ll = 0.0;
    for mut row in w.axis_iter_mut(Axis(0)) {
        let lse = log_sum_exp(row.iter().copied());
        ll += lse;
        row.mapv_inplace(|v| (v - lse).exp());
    }
    Ok((w, ll))
}

fn penalty(model: &GmmModel, reg_lambda: f64) -> f64 {
    0.5 * reg_lambda
        * model
            .components
            .iter()
            .map(|c| c.gaussian.precision_trace())
            .sum::<f64>()
}

pub fn fit_gmm(train: &FeatureMatrix, k: usize, seed: u64) -> Result<GmmModel> {
    fit_gmm_with(
        train,
        &GmmConfig {
            k,
            seed,
            ..GmmConfig::default()
        },
    )
}

pub fn fit_gmm_with(train: &FeatureMatrix, config: &GmmConfig) -> Result<GmmModel> {
    let x = train.values();
    let n = x.nrows();
    if config.k == 0 {
        return Err(Error::config("GMM needs k >= 1"));
    }
    if n < config.k.max(2) {
        return Err(Error::invalid(format!("GMM with k={} needs at least {} samples", config.k, config.k.max(2))));
    }
    if config.k == 1 {
        let gaussian = fit_gaussian_values(x, config.reg_lambda)?;
        let ll = gaussian.log_density(x)?.sum();
        return Ok(GmmModel {
            components: vec![GmmComponent { weight: 1.0, gaussian }],
            iterations: 0,
            final_log_likelihood: ll,
            objective_trace: vec![ll],
            log_likelihood_trace: vec![ll],
            pruned: 0,
        });
    }

    let centers = kmeans_pp(x, config.k, config.seed);
    let mut resp = Array2::zeros((n, config.k));
    for i in 0..n {
        let best = (0..config.k)
            .min_by(|&a, &b| sq_dist(x.row(i), x.row(centers[a])).total_cmp(&sq_dist(x.row(i), x.row(centers[b]))))
            .expect("k >= 1");
        resp[[i, best]] = 1.0;
    }
    let (components, mut pruned) = m_step(x, &resp, config.reg_lambda)?;
    let mut model = GmmModel {
        components,
        iterations: 0,
        final_log_likelihood: f64::NAN,
        objective_trace: Vec::new(),
        log_likelihood_trace: Vec::new(),
        pruned: 0,
    };
    loop {
        let (resp, ll) = e_step(&model, x)?;
        let objective = ll - penalty(&model, config.reg_lambda);
        let prev = model.objective_trace.last().copied();
        model.objective_trace.push(objective);
        model.log_likelihood_trace.push(ll);
        model.final_log_likelihood = ll;
        let converged = prev.is_some_and(|p| (objective - p).abs() <= config.tol * (1.0 + objective.abs()));
        if converged || model.iterations >= config.max_iter {
            break;
        }
        let (components, p) = m_step(x, &resp, config.reg_lambda)?;
        pruned += p;
        model.components = components;
        model.iterations += 1;
    }
    model.pruned = pruned;
    Ok(model)
}

pub fn gmm_log_likelihood(model: &GmmModel, x: &FeatureMatrix) -> Result<ScoreVector> {
    ScoreVector::new(model.log_density(x.values())?, x.space())
}
