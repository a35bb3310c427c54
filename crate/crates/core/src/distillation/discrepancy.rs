use ndarray::{Array1, Array2, Array3, ArrayView3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::{tap_forward, StudentEnsemble};
use crate::backbone::{HiddenStates, ImageBatch, TransformerBlock, VisionTransformer};
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureMeta, SpaceTag};

/// How the per-block squared differences are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscrepancyNorm {
    /// Sum over all `T * D` activation elements (squared Euclidean norm).
    #[default]
    Sum,
    /// Mean over activation elements; a per-column rescaling of `Sum`.
    Mean,
}

/// `n x m` teacher-student discrepancies, one column per block.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyMatrix {
    pub values: Array2<f64>,
    pub block_indices: Vec<usize>,
}

impl DiscrepancyMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn to_features(&self, meta: FeatureMeta) -> Result<FeatureMatrix> {
        FeatureMatrix::new(self.values.clone(), SpaceTag::Finetuned, meta)
    }
}

/// Discrepancy of one student on given block inputs against tapped teacher targets.
pub(crate) fn block_discrepancy(
    teacher: &VisionTransformer,
    student: &TransformerBlock,
    inputs: ArrayView3<f64>,
    targets: &Array3<f64>,
    norm: DiscrepancyNorm,
) -> Array1<f64> {
    let pred = tap_forward(teacher, student.forward(inputs).view());
    let diff = pred - targets;
    let per_sample = diff.map_axis(Axis(2), |v| v.dot(&v)).sum_axis(Axis(1));
    match norm {
        DiscrepancyNorm::Sum => per_sample,
        DiscrepancyNorm::Mean => {
            let elems = (targets.len_of(Axis(1)) * targets.len_of(Axis(2))) as f64;
            per_sample / elems
        }
    }
}

fn check_ensemble(teacher: &VisionTransformer, ensemble: &StudentEnsemble) -> Result<()> {
    super::train::validate_indices(&ensemble.block_indices, teacher.spec().num_blocks)?;
    if ensemble.students.len() != ensemble.block_indices.len() {
        return Err(Error::invalid("ensemble has mismatched student and index counts"));
    }
    for (&j, student) in ensemble.block_indices.iter().zip(&ensemble.students) {
        if !student.same_architecture(teacher.block(j)?) {
            return Err(Error::invalid(format!(
                "student for block {j} does not match the teacher block's shapes"
            )));
        }
    }
    Ok(())
}

/// Discrepancy features from precomputed teacher states.
pub fn discrepancy_from_states(
    teacher: &VisionTransformer,
    states: &HiddenStates,
    ensemble: &StudentEnsemble,
) -> Result<DiscrepancyMatrix> {
    check_ensemble(teacher, ensemble)?;
    if states.num_blocks() != teacher.spec().num_blocks {
        return Err(Error::invalid("hidden states do not cover every teacher block"));
    }
    let norm = ensemble.config.discrepancy_norm;
    let columns: Vec<Array1<f64>> = ensemble
        .block_indices
        .par_iter()
        .zip(ensemble.students.par_iter())
        .map(|(&j, student)| {
            let targets = tap_forward(teacher, states.output_of(j));
            block_discrepancy(teacher, student, states.input_of(j), &targets, norm)
        })
        .collect();
    let mut values = Array2::zeros((states.num_samples(), columns.len()));
    for (mut col, c) in values.columns_mut().into_iter().zip(&columns) {
        col.assign(c);
    }
    Ok(DiscrepancyMatrix {
        values,
        block_indices: ensemble.block_indices.clone(),
    })
}

/// Discrepancy features for a preprocessed batch.
pub fn discrepancy_features(
    batch: &ImageBatch,
    teacher: &VisionTransformer,
    ensemble: &StudentEnsemble,
) -> Result<DiscrepancyMatrix> {
    let states = teacher.hidden_states(batch)?;
    discrepancy_from_states(teacher, &states, ensemble)
}
