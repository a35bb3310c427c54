//! Teacher-student distillation per transformer block.
//!
//! Each selected teacher block gets its own student with the same
//! architecture, trained only on normal data to reproduce the teacher's
//! output from the teacher's input (mean over the batch of the squared
//! Euclidean error). The per-block squared error of a sample is its
//! fine-tuned feature vector.

mod checkpoint;
mod discrepancy;
mod optim;
mod train;

pub use checkpoint::{
    load_ensemble, save_ensemble, train_students_resumable, EnsembleManifest, LogSummary, ResumeReport,
    CHECKPOINT_VERSION,
};
pub use discrepancy::{discrepancy_features, discrepancy_from_states, DiscrepancyMatrix, DiscrepancyNorm};
pub use optim::OptimizerKind;
pub use train::{
    student_seed, train_students, train_students_on_states, BlockTrainingLog, NormalityStats, StudentEnsemble,
    StudentInit, TrainConfig,
};
