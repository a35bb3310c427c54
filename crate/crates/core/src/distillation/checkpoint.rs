use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{train_block, validate_indices, BlockTrainingLog, StudentEnsemble, TrainConfig};
use crate::archive::TensorArchive;
use crate::backbone::{block_from_archive, HiddenStates, TapPoint, TransformerBlock, VisionTransformer, TENSOR_NAMES};
use crate::error::{Error, Result};
use crate::io::atomic_write;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogSummary {
    pub block_index: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs_run: usize,
}

/// `manifest.json` of an ensemble checkpoint directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub version: u32,
    pub backbone_id: String,
    pub block_indices: Vec<usize>,
    pub tap: TapPoint,
    pub config_snapshot: TrainConfig,
    pub training_log_summary: Vec<LogSummary>,
}

fn block_stem(dir: &Path, j: usize) -> std::path::PathBuf {
    dir.join(format!("block_{j:02}"))
}

fn save_block(dir: &Path, student: &TransformerBlock, log: &BlockTrainingLog) -> Result<()> {
    let meta = serde_json::json!({
        "block_index": log.block_index,
        "num_heads": student.num_heads,
        "log": log,
    });
    let mut a = TensorArchive::new("student_block", meta);
    for (name, t) in TENSOR_NAMES.iter().zip(student.tensors()) {
        a.push(*name, t);
    }
    a.save(&block_stem(dir, log.block_index))
}

fn load_block(dir: &Path, j: usize) -> Result<(TransformerBlock, BlockTrainingLog)> {
    let a = TensorArchive::load(&block_stem(dir, j))?;
    if a.kind != "student_block" {
        return Err(Error::invalid(format!("block_{j:02} is a `{}` archive", a.kind)));
    }
    let heads = a.metadata["num_heads"]
        .as_u64()
        .ok_or_else(|| Error::invalid("student block is missing num_heads"))? as usize;
    let log: BlockTrainingLog = serde_json::from_value(a.metadata["log"].clone())?;
    if log.block_index != j {
        return Err(Error::invalid(format!("block_{j:02} holds block {}", log.block_index)));
    }
    Ok((block_from_archive(&a, "", heads)?, log))
}

/// Writes one weight archive per block plus `manifest.json`.
pub fn save_ensemble(ensemble: &StudentEnsemble, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (student, log) in ensemble.students.iter().zip(&ensemble.training_log) {
        save_block(dir, student, log)?;
    }
    write_manifest(ensemble, dir)
}

fn write_manifest(ensemble: &StudentEnsemble, dir: &Path) -> Result<()> {
    let manifest = EnsembleManifest {
        version: CHECKPOINT_VERSION,
        backbone_id: ensemble.backbone_id.clone(),
        block_indices: ensemble.block_indices.clone(),
        tap: ensemble.tap,
        config_snapshot: ensemble.config.clone(),
        training_log_summary: ensemble
            .training_log
            .iter()
            .map(|l| LogSummary {
                block_index: l.block_index,
                initial_loss: l.initial_loss,
                final_loss: l.final_loss,
                epochs_run: l.epoch_losses.len(),
            })
            .collect(),
    };
    atomic_write(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())
}

pub fn load_ensemble(dir: &Path) -> Result<StudentEnsemble> {
    let manifest: EnsembleManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::invalid(format!("unsupported checkpoint version {}", manifest.version)));
    }
    let mut students = Vec::new();
    let mut training_log = Vec::new();
    for &j in &manifest.block_indices {
        let (s, l) = load_block(dir, j)?;
        students.push(s);
        training_log.push(l);
    }
    Ok(StudentEnsemble {
        block_indices: manifest.block_indices,
        students,
        training_log,
        config: manifest.config_snapshot,
        backbone_id: manifest.backbone_id,
        tap: manifest.tap,
    })
}

/// Result of [`train_students_resumable`].
#[derive(Debug)]
pub struct ResumeReport {
    pub ensemble: StudentEnsemble,
    pub resumed_blocks: Vec<usize>,
    pub trained_blocks: Vec<usize>,
}

/// Trains students block by block, saving each as it completes. Blocks with a
/// valid archive in `dir` written under the same configuration are loaded
/// instead of retrained.
pub fn train_students_resumable(
    teacher: &VisionTransformer,
    states: &HiddenStates,
    block_indices: &[usize],
    config: &TrainConfig,
    dir: &Path,
) -> Result<ResumeReport> {
    config.validate()?;
    validate_indices(block_indices, teacher.spec().num_blocks)?;
    fs::create_dir_all(dir)?;
    let config_path = dir.join("config.json");
    let config_json = serde_json::to_string_pretty(&(teacher.identifier(), config))?;
    let same_config = fs::read_to_string(&config_path).is_ok_and(|c| c == config_json);
    if !same_config {
        atomic_write(&config_path, config_json.as_bytes())?;
    }

    let mut students = Vec::new();
    let mut logs = Vec::new();
    let mut resumed = Vec::new();
    let mut trained = Vec::new();
    for &j in block_indices {
        let existing = if same_config { load_block(dir, j).ok() } else { None };
        let (student, log) = match existing {
            Some(done) => {
                resumed.push(j);
                done
            }
            None => {
                let done = train_block(teacher, states, j, config)?;
                save_block(dir, &done.0, &done.1)?;
                trained.push(j);
                done
            }
        };
        students.push(student);
        logs.push(log);
    }
    let ensemble = StudentEnsemble {
        block_indices: block_indices.to_vec(),
        students,
        training_log: logs,
        config: config.clone(),
        backbone_id: teacher.identifier(),
        tap: teacher.spec().tap,
    };
    write_manifest(&ensemble, dir)?;
    Ok(ResumeReport {
        ensemble,
        resumed_blocks: resumed,
        trained_blocks: trained,
    })
}
