//! Whitening, density models and score combination.
//!
//! All scores are log-likelihoods (or negated distances) where higher means
//! more normal.

mod combine;
mod gaussian;
mod gmm;
mod knn;
pub(crate) mod linalg;
mod whiten;

pub use combine::combined_score;
pub use gaussian::{fit_gaussian, gaussian_log_likelihood, GaussianModel, DEFAULT_REG_LAMBDA};
pub use gmm::{fit_gmm, fit_gmm_with, gmm_log_likelihood, GmmComponent, GmmConfig, GmmModel, PRUNE_WEIGHT};
pub use knn::knn_score;
pub use whiten::{apply_whitener, fit_whitener, retained_dimension, WhitenTransform, EIGEN_FLOOR};
