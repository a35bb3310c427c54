use ndarray::{concatenate, Array3, ArrayView3, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::discrepancy::{block_discrepancy, DiscrepancyNorm};
use super::optim::{Optimizer, OptimizerKind};
use crate::backbone::{flatten, HiddenStates, ImageBatch, TapPoint, TransformerBlock, VisionTransformer};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};

/// How student blocks are initialized before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudentInit {
    /// Truncation-free normal weights (std 0.02), zero biases, identity norms.
    #[default]
    Random,
    /// Exact copy of the teacher block.
    TeacherCopy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub early_stop_patience: Option<usize>,
    pub init: StudentInit,
    pub discrepancy_norm: DiscrepancyNorm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            early_stop_patience: Some(5),
            init: StudentInit::Random,
            discrepancy_norm: DiscrepancyNorm::Sum,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.early_stop_patience == Some(0) {
            return Err(Error::config("early_stop_patience must be positive when set"));
        }
        Ok(())
    }
}

/// Sample skewness and excess kurtosis of one discrepancy column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityStats {
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl NormalityStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len() as f64;
        if values.len() < 3 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n;
        let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if m2 <= 0.0 {
            return None;
        }
        let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
        let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        Some(Self {
            skewness: m3 / m2.powf(1.5),
            excess_kurtosis: m4 / (m2 * m2) - 3.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTrainingLog {
    pub block_index: usize,
    pub seed: u64,
    /// Loss over the full normal set before any update.
    pub initial_loss: f64,
    /// Mean minibatch loss of every epoch that ran.
    pub epoch_losses: Vec<f64>,
    /// Loss over the full normal set after training.
    pub final_loss: f64,
    pub stopped_early: bool,
    /// Shape of the block's discrepancy distribution on the training set.
    pub normality: Option<NormalityStats>,
}

/// Student blocks trained to mimic a frozen teacher's blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentEnsemble {
    pub block_indices: Vec<usize>,
    pub students: Vec<TransformerBlock>,
    pub training_log: Vec<BlockTrainingLog>,
    pub config: TrainConfig,
    pub backbone_id: String,
    pub tap: TapPoint,
}

impl StudentEnsemble {
    pub fn len(&self) -> usize {
        self.block_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.block_indices.is_empty()
    }

    /// The sub-ensemble covering `indices`, which must all be present.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Self {
            block_indices: Vec::new(),
            students: Vec::new(),
            training_log: Vec::new(),
            config: self.config.clone(),
            backbone_id: self.backbone_id.clone(),
            tap: self.tap,
        };
        for &j in indices {
            let pos = self
                .block_indices
                .iter()
                .position(|&b| b == j)
                .ok_or_else(|| Error::invalid(format!("ensemble has no student for block {j}")))?;
            out.block_indices.push(j);
            out.students.push(self.students[pos].clone());
            out.training_log.push(self.training_log[pos].clone());
        }
        validate_indices(&out.block_indices, usize::MAX)?;
        Ok(out)
    }
}

pub(crate) fn validate_indices(indices: &[usize], num_blocks: usize) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::config("at least one block index is required"));
    }
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(format!("block indices {indices:?} must be strictly increasing")));
    }
    if let Some(&bad) = indices.iter().find(|&&j| j >= num_blocks) {
        return Err(Error::config(format!("block index {bad} out of range for {num_blocks} blocks")));
    }
    Ok(())
}

/// Per-block student seed, independent of training order.
pub fn student_seed(master: u64, block_index: usize) -> u64 {
    derive_seed(master, "student-block", block_index as u64)
}

pub(crate) fn init_student(teacher: &TransformerBlock, init: StudentInit, seed: u64) -> TransformerBlock {
    match init {
        StudentInit::TeacherCopy => teacher.clone(),
        StudentInit::Random => {
            let mut r = rng(derive_seed(seed, "init", 0));
            TransformerBlock::random(&mut r, teacher.dim(), teacher.num_heads, teacher.mlp_dim(), 0.02, 0.0, false)
        }
    }
}

/// Applies the tap and, when training, returns what the backward pass needs.
pub(crate) fn tap_forward(teacher: &VisionTransformer, x: ArrayView3<f64>) -> Array3<f64> {
    teacher.tap(x)
}

fn tapped_loss_and_grad(
    teacher: &VisionTransformer,
    student_out: &Array3<f64>,
    target: &Array3<f64>,
) -> (f64, Array3<f64>) {
    let n = student_out.len_of(Axis(0)) as f64;
    let (b, t, d) = student_out.dim();
    match teacher.spec().tap {
        TapPoint::Residual => {
            let diff = student_out - target;
            let loss = diff.iter().map(|v| v * v).sum::<f64>() / n;
            (loss, diff * (2.0 / n))
        }
        TapPoint::Normalized => {
            let norm = teacher.final_norm();
            let (pred, cache) = norm.forward_cached(flatten(student_out.view()).view());
            let diff = pred - flatten(target.view());
            let loss = diff.iter().map(|v| v * v).sum::<f64>() / n;
            let (dx, _, _) = norm.backward(&cache, &(diff * (2.0 / n)));
            (loss, dx.into_shape_with_order((b, t, d)).expect("contiguous"))
        }
    }
}

fn full_loss(student: &TransformerBlock, teacher: &VisionTransformer, inputs: ArrayView3<f64>, targets: &Array3<f64>) -> f64 {
    let pred = tap_forward(teacher, student.forward(inputs).view());
    let n = inputs.len_of(Axis(0)) as f64;
    (pred - targets).iter().map(|v| v * v).sum::<f64>() / n
}

/// Trains one student against teacher block `block_index` on normal states.
pub(crate) fn train_block(
    teacher: &VisionTransformer,
    states: &HiddenStates,
    block_index: usize,
    config: &TrainConfig,
) -> Result<(TransformerBlock, BlockTrainingLog)> {
    let teacher_block = teacher.block(block_index)?;
    let seed = student_seed(config.seed, block_index);
    let inputs = states.input_of(block_index);
    let targets = tap_forward(teacher, states.output_of(block_index));
    let n = inputs.len_of(Axis(0));

    let mut student = init_student(teacher_block, config.init, seed);
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, &student);
    let initial_loss = full_loss(&student, teacher, inputs, &targets);
    if !initial_loss.is_finite() {
        return Err(Error::numerical(format!("block {block_index}: non-finite initial loss")));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = rng(derive_seed(seed, "shuffle", 0));
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x = inputs.select(Axis(0), chunk);
            let y = targets.select(Axis(0), chunk);
            let (out, cache) = student.forward_cached(x.view());
            let (loss, d_out) = tapped_loss_and_grad(teacher, &out, &y);
            if !loss.is_finite() {
                return Err(Error::numerical(format!(
                    "block {block_index}: non-finite loss at epoch {epoch}"
                )));
            }
            let (grads, _) = student.backward(&cache, &d_out);
            opt.step(&mut student, &grads);
            total += loss * chunk.len() as f64;
        }
        let epoch_loss = total / n as f64;
        epoch_losses.push(epoch_loss);
        log::debug!("block {block_index} epoch {epoch}: loss {epoch_loss:.6e}");
        if epoch_loss < best * (1.0 - 1e-9) {
            best = epoch_loss;
            since_best = 0;
        } else {
            since_best += 1;
            if config.early_stop_patience.is_some_and(|p| since_best >= p) {
                stopped_early = true;
                break;
            }
        }
    }

    let final_loss = full_loss(&student, teacher, inputs, &targets);
    if !final_loss.is_finite() {
        return Err(Error::numerical(format!("block {block_index}: non-finite final loss")));
    }
    let column = block_discrepancy(teacher, &student, inputs, &targets, config.discrepancy_norm);
    let normality = NormalityStats::of(column.as_slice().expect("contiguous"));
    if let Some(s) = normality {
        log::info!(
            "block {block_index}: loss {initial_loss:.4e} -> {final_loss:.4e}; discrepancy skew {:.3}, excess kurtosis {:.3}",
            s.skewness,
            s.excess_kurtosis
        );
    }
    Ok((
        student,
        BlockTrainingLog {
            block_index,
            seed,
            initial_loss,
            epoch_losses,
            final_loss,
            stopped_early,
            normality,
        },
    ))
}

/// Trains one independent student per requested block on precomputed
/// normal-sample states. Blocks train in parallel; results do not depend on
/// scheduling because every block owns its seed.
pub fn train_students_on_states(
    teacher: &VisionTransformer,
    states: &HiddenStates,
    block_indices: &[usize],
    config: &TrainConfig,
) -> Result<StudentEnsemble> {
    config.validate()?;
    validate_indices(block_indices, teacher.spec().num_blocks)?;
    if states.num_samples() == 0 {
        return Err(Error::invalid("no normal samples to train on"));
    }
    if states.num_blocks() != teacher.spec().num_blocks {
        return Err(Error::invalid("hidden states do not cover every teacher block"));
    }
    let trained: Vec<_> = block_indices
        .par_iter()
        .map(|&j| train_block(teacher, states, j, config))
        .collect::<Result<_>>()?;
    let (students, training_log) = trained.into_iter().unzip();
    Ok(StudentEnsemble {
        block_indices: block_indices.to_vec(),
        students,
        training_log,
        config: config.clone(),
        backbone_id: teacher.identifier(),
        tap: teacher.spec().tap,
    })
}

/// Runs the frozen teacher over a stream of preprocessed normal batches and
/// trains the students on the resulting states.
pub fn train_students(
    teacher: &VisionTransformer,
    normal_batches: &[ImageBatch],
    block_indices: &[usize],
    config: &TrainConfig,
) -> Result<StudentEnsemble> {
    if normal_batches.is_empty() {
        return Err(Error::invalid("empty training stream"));
    }
    let per_batch = normal_batches
        .iter()
        .map(|b| teacher.hidden_states(b))
        .collect::<Result<Vec<_>>>()?;
    let states = concat_states(&per_batch)?;
    train_students_on_states(teacher, &states, block_indices, config)
}

pub(crate) fn concat_states(parts: &[HiddenStates]) -> Result<HiddenStates> {
    let k = parts[0].states().len();
    let states = (0..k)
        .map(|i| {
            let views: Vec<_> = parts.iter().map(|p| p.states()[i].view()).collect();
            concatenate(Axis(0), &views).map_err(|e| Error::invalid(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    HiddenStates::new(states)
}
