use std::f64::consts::PI;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::linalg::{cholesky, mean_and_covariance, solve_lower_rows, symmetrize, to_na};
use crate::archive::{to_array1, to_array2, TensorArchive};
use crate::error::{ensure_dim, Error, Result};
use crate::features::{FeatureMatrix, ScoreVector};

/// Default diagonal loading, also the first escalation step.
pub const DEFAULT_REG_LAMBDA: f64 = 1e-6;
const MAX_ESCALATIONS: usize = 18;

/// Full-covariance Gaussian with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    mean: Array1<f64>,
    /// Regularized covariance (`sample + reg_lambda * I`).
    covariance: Array2<f64>,
    reg_lambda: f64,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl PartialEq for GaussianModel {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.covariance == other.covariance && self.reg_lambda == other.reg_lambda
    }
}

impl GaussianModel {
    /// Builds a model from a mean and an already-regularized covariance.
    /// Fails if the covariance is not positive definite.
    pub fn new(mean: Array1<f64>, covariance: Array2<f64>, reg_lambda: f64) -> Result<Self> {
        ensure_dim(mean.len(), covariance.nrows(), "covariance rows")?;
        ensure_dim(mean.len(), covariance.ncols(), "covariance columns")?;
        if mean.is_empty() {
            return Err(Error::invalid("zero-dimensional Gaussian"));
        }
        let l = cholesky(covariance.view())
            .ok_or_else(|| Error::numerical("covariance is not positive definite"))?;
        let log_det = 2.0 * l.diag().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            mean,
            covariance,
            reg_lambda,
            chol: to_na(l.view()),
            log_det,
        })
    }

    /// Standard normal in `d` dimensions.
    pub fn standard(d: usize) -> Result<Self> {
        Self::new(Array1::zeros(d), Array2::eye(d), 0.0)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &Array2<f64> {
        &self.covariance
    }

    /// Diagonal loading actually applied, after any escalation.
    pub fn reg_lambda(&self) -> f64 {
        self.reg_lambda
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn cholesky_factor(&self) -> Array2<f64> {
        super::linalg::from_na(&self.chol)
    }

    /// Squared Mahalanobis distance of each row.
    pub fn mahalanobis_sq(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        ensure_dim(self.dim(), x.ncols(), "Gaussian input columns")?;
        let centered = &x - &self.mean;
        let z = solve_lower_rows(&self.chol, centered.view());
        Ok(z.map_axis(Axis(1), |r| r.dot(&r)))
    }

    pub fn log_density(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let m = self.mahalanobis_sq(x)?;
        let c = -0.5 * (self.dim() as f64 * (2.0 * PI).ln() + self.log_det);
        Ok(m.mapv(|v| c - 0.5 * v))
    }

    /// `tr(Sigma^-1)`, the Frobenius norm squared of `L^-1`.
    pub fn precision_trace(&self) -> f64 {
        let d = self.dim();
        let inv = self
            .chol
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .expect("nonsingular factor");
        inv.iter().map(|v| v * v).sum()
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut a = TensorArchive::new("gaussian", serde_json::json!({ "reg_lambda": self.reg_lambda }));
        a.push("mean", self.mean.view().into_dyn());
        a.push("covariance", self.covariance.view().into_dyn());
        a
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self> {
        if a.kind != "gaussian" {
            return Err(Error::invalid(format!("expected a Gaussian archive, found `{}`", a.kind)));
        }
        let reg = a.metadata["reg_lambda"]
            .as_f64()
            .ok_or_else(|| Error::invalid("Gaussian archive lacks reg_lambda"))?;
        Self::new(
            to_array1(a.get("mean")?, "mean")?,
            to_array2(a.get("covariance")?, "covariance")?,
            reg,
        )
    }
}

/// Adds `lambda * I`, escalating by decades from [`DEFAULT_REG_LAMBDA`] until
/// the factorization succeeds.
pub(crate) fn regularized_model(mean: Array1<f64>, mut raw_cov: Array2<f64>, reg_lambda: f64) -> Result<GaussianModel> {
    symmetrize(&mut raw_cov);
    let mut lambda = reg_lambda;
    for step in 0..=MAX_ESCALATIONS {
        let mut cov = raw_cov.clone();
        cov.diag_mut().mapv_inplace(|v| v + lambda);
        match GaussianModel::new(mean.clone(), cov, lambda) {
            Ok(m) => {
                if step > 0 {
                    log::warn!("covariance regularization escalated from {reg_lambda:e} to {lambda:e}");
                }
                return Ok(m);
            }
            Err(_) => {
                lambda = if lambda < DEFAULT_REG_LAMBDA {
                    DEFAULT_REG_LAMBDA
                } else {
                    lambda * 10.0
                };
            }
        }
    }
    Err(Error::numerical(format!(
        "covariance not positive definite even with regularization {lambda:e}"
    )))
}

pub(crate) fn fit_gaussian_values(x: ArrayView2<f64>, reg_lambda: f64) -> Result<GaussianModel> {
    if x.nrows() < 2 {
        return Err(Error::invalid("a Gaussian fit needs at least two samples"));
    }
    if !(reg_lambda >= 0.0 && reg_lambda.is_finite()) {
        return Err(Error::config(format!("reg_lambda must be non-negative, got {reg_lambda}")));
    }
    let (mean, cov) = mean_and_covariance(x);
    regularized_model(mean, cov, reg_lambda)
}

/// Sample mean and sample covariance plus `reg_lambda * I`.
pub fn fit_gaussian(train: &FeatureMatrix, reg_lambda: f64) -> Result<GaussianModel> {
    fit_gaussian_values(train.values(), reg_lambda)
}

pub fn gaussian_log_likelihood(model: &GaussianModel, x: &FeatureMatrix) -> Result<ScoreVector> {
    ScoreVector::new(model.log_density(x.values())?, x.space())
}
