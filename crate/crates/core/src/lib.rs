//! Semantic anomaly detection in two feature spaces.
//!
//! Samples are embedded by a frozen vision transformer (pretrained space) and
//! described by per-block discrepancies between the frozen blocks and student
//! blocks trained on normal data (fine-tuned space). Each space is modeled by
//! a Gaussian and the normality score is the sum of the two log-likelihoods.
//!
//! Modules:
//! - [`backbone`]: transformer adapter, preprocessing, feature cache
//! - [`distillation`]: student training and discrepancy features
//! - [`density`]: whitening, Gaussian / GMM / kNN scoring, score combination
//! - [`benchmark`]: datasets, unimodal/multimodal splits, AUROC, experiment runner
//! - [`diagnostics`]: pretraining-confusion detection and demonstrations

pub mod archive;
pub mod backbone;
pub mod benchmark;
pub mod density;
pub mod diagnostics;
pub mod distillation;
pub mod error;
pub mod features;
pub mod io;
pub mod seed;

pub use backbone::{Backbone, BackboneSpec, FeatureBank, ImageBatch, VisionTransformer};
pub use benchmark::{auroc, EvalSplit, ExperimentReport, Setting};
pub use density::{GaussianModel, WhitenTransform};
pub use error::{Error, ErrorKind, Result};
pub use features::{FeatureMatrix, ScoreVector, SpaceTag};
