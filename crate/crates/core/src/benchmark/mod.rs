//! Datasets, unimodal/multimodal splits, AUROC and the experiment runner.

mod auroc;
mod datasets;
mod experiment;
mod loaders;
mod report;
mod split;
mod variant;

pub use auroc::{auroc, auroc_values};
pub use datasets::{
    blob_centers, blob_images, blob_vectors, spectral, BlobImageConfig, BlobVectorConfig, Dataset, SpectralConfig,
};
pub use experiment::{
    ablation_runner, resolve_blocks, run_experiment, trial_seed, AblationTable, Experiment, PipelineConfig,
};
pub use loaders::{
    load_cifar10, load_cifar100_coarse, load_fmnist, CIFAR100_COARSE_CLASSES, CIFAR10_CLASSES, FMNIST_CLASSES,
};
pub use report::{mean, reports_to_csv, sample_std, summary_csv, ExperimentReport, TrialResult};
pub use split::{make_multimodal_split, make_split, make_unimodal_split, EvalSplit, Setting};
pub use variant::{
    block_ablation_variants, energy_ablation_variants, scorer_ablation_variants, FeatureSet, Scorer, Variant,
    DEFAULT_ENERGY,
};
