use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use dualspace_core::backbone::{Backbone, FeatureCache};
use dualspace_core::benchmark::{make_split, AblationTable, Dataset, Experiment, Setting};
use dualspace_core::diagnostics::{
    auroc_inflation_demo, confusion_report, save_scatter_png, toy_confusion_demo, toy_separated_control,
    InflationConfig, InflationResult, ToyDemoResult,
};
use dualspace_core::distillation::{train_students_resumable, EnsembleManifest};
use dualspace_core::io::atomic_write;
use dualspace_core::FeatureMatrix;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{io_err, CliError, CliResult};

/// Contents of `report.json`. Timings go to `timing.json` so identical runs
/// produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub backbone: String,
    pub setting: Setting,
    pub seed: u64,
    pub trials: usize,
    /// Resolved run configuration, overrides applied.
    pub config: RunConfig,
    pub table: AblationTable,
}

#[derive(Debug, Serialize)]
struct Timing {
    extract_seconds: f64,
    evaluate_seconds: f64,
}

#[derive(Debug, Serialize)]
struct Demos {
    toy_coincident: ToyDemoResult,
    toy_separated: ToyDemoResult,
    inflation: InflationResult,
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    Ok(atomic_write(path, bytes)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text.as_bytes())
}

fn output_dir(cfg: &RunConfig) -> CliResult<&Path> {
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    Ok(dir)
}

fn vit(backbone: &Backbone) -> CliResult<&dualspace_core::VisionTransformer> {
    backbone
        .vit()
        .ok_or_else(|| CliError::Config("student training needs a transformer backbone".into()))
}

fn setup(cfg: &RunConfig) -> CliResult<(Dataset, Backbone, FeatureCache)> {
    let ds = cfg.load_dataset()?;
    let bb = cfg.load_backbone()?;
    Ok((ds, bb, FeatureCache::new(&cfg.cache_dir)))
}

/// Extracts (or finds cached) features of both splits.
pub fn extract(cfg: &RunConfig) -> CliResult<String> {
    let (ds, bb, cache) = setup(cfg)?;
    let mut out = String::new();
    for (split, batch) in [("train", &ds.train), ("test", &ds.test)] {
        let (bank, outcome) = cache.get_or_extract(&bb, batch, &ds.name, split)?;
        let key = FeatureCache::key(&bb, batch.ids());
        writeln!(
            out,
            "{split}: {outcome:?} ({} samples, {} dims) key {key}",
            bank.len(),
            bank.pretrained.ncols()
        )
        .unwrap();
    }
    Ok(out)
}

/// Trains students on the normal training data of `cfg.pivot`.
pub fn train(cfg: &RunConfig) -> CliResult<String> {
    let (ds, bb, cache) = setup(cfg)?;
    let teacher = vit(&bb)?;
    let split = make_split(&ds, cfg.setting, cfg.pivot)?;
    let exp = Experiment::prepare(&ds, &bb, Some(&cache))?;
    let bank = exp.train.select(&split.train_indices);
    let states = bank
        .hidden
        .as_ref()
        .ok_or_else(|| CliError::Config("backbone produced no hidden states".into()))?;
    let pipeline = cfg.pipeline();
    let blocks = match &pipeline.blocks {
        Some(b) => b.clone(),
        None => teacher.spec().default_block_indices(),
    };
    let mut train_cfg = pipeline.train.clone();
    train_cfg.seed = cfg.seed;
    let dir = output_dir(cfg)?.join("students");
    let rep = train_students_resumable(teacher, states, &blocks, &train_cfg, &dir)?;

    let mut csv = String::from("block,epoch,loss\n");
    for log in &rep.ensemble.training_log {
        writeln!(csv, "{},0,{}", log.block_index, log.initial_loss).unwrap();
        for (e, l) in log.epoch_losses.iter().enumerate() {
            writeln!(csv, "{},{},{}", log.block_index, e + 1, l).unwrap();
        }
    }
    write(&cfg.output_dir.join("loss_curves.csv"), csv.as_bytes())?;
    let manifest: EnsembleManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json")).map_err(io_err(&dir))?)?;
    Ok(format!(
        "trained blocks {:?}, resumed {:?}; manifest at {}\n{}",
        rep.trained_blocks,
        rep.resumed_blocks,
        dir.join("manifest.json").display(),
        serde_json::to_string(&manifest.training_log_summary)?
    ))
}

/// Runs every configured variant and writes the report files.
pub fn evaluate(cfg: &RunConfig) -> CliResult<EvaluationReport> {
    let (ds, bb, cache) = setup(cfg)?;
    let t0 = Instant::now();
    let exp = Experiment::prepare(&ds, &bb, Some(&cache))?;
    let extract_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let pipeline = cfg.pipeline();
    let rows = exp.run(cfg.setting, &pipeline, &cfg.variants, cfg.trials, cfg.seed)?;
    let evaluate_seconds = t1.elapsed().as_secs_f64();
    let report = EvaluationReport {
        dataset: ds.name.clone(),
        backbone: bb.identifier(),
        setting: cfg.setting,
        seed: cfg.seed,
        trials: cfg.trials,
        config: cfg.clone(),
        table: AblationTable {
            dataset: ds.name.clone(),
            setting: cfg.setting,
            rows,
        },
    };
    let dir = output_dir(cfg)?;
    write_json(&dir.join("report.json"), &report)?;
    write(
        &dir.join("report.csv"),
        dualspace_core::benchmark::reports_to_csv(&report.table.rows).as_bytes(),
    )?;
    write(&dir.join("summary.csv"), report.table.to_csv().as_bytes())?;
    write_json(
        &dir.join("timing.json"),
        &Timing {
            extract_seconds,
            evaluate_seconds,
        },
    )?;
    Ok(report)
}

/// Confusion analysis of the pretrained features plus the two demonstrations.
pub fn diagnose(cfg: &RunConfig) -> CliResult<String> {
    let (ds, bb, cache) = setup(cfg)?;
    let (bank, _) = cache.get_or_extract(&bb, &ds.train, &ds.name, "train")?;
    let features = FeatureMatrix::from_array(bank.pretrained)?;
    let report = confusion_report(&features, &ds.train_labels(), cfg.flag_threshold)?;
    let dir = output_dir(cfg)?;
    write_json(&dir.join("confusion.json"), &report)?;
    save_scatter_png(report.projection_coords.view(), &ds.train_labels(), &dir.join("projection.png"))?;
    let demos = Demos {
        toy_coincident: toy_confusion_demo(cfg.seed)?,
        toy_separated: toy_separated_control(cfg.seed)?,
        inflation: auroc_inflation_demo(&InflationConfig {
            seed: cfg.seed,
            ..InflationConfig::coarse_cifar100()
        })?,
    };
    write_json(&dir.join("demos.json"), &demos)?;

    let mut out = String::new();
    if report.flagged_pairs.is_empty() {
        writeln!(out, "no class pair above confusion {}", report.threshold).unwrap();
    }
    for p in &report.flagged_pairs {
        writeln!(
            out,
            "confused: {} / {} ({:.3})",
            ds.class_names[p.class_a], ds.class_names[p.class_b], p.confusion
        )
        .unwrap();
    }
    for d in [&demos.toy_coincident, &demos.toy_separated] {
        writeln!(out, "{}", d.narrative).unwrap();
    }
    writeln!(out, "{}", demos.inflation.narrative).unwrap();
    Ok(out)
}

/// Human-readable table of an existing `report.json`.
pub fn summarize(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let report: EvaluationReport = serde_json::from_slice(&bytes)?;
    let mut out = format!(
        "{} / {} / {} (seed {}, {} trial(s))\n",
        report.dataset, report.backbone, report.setting, report.seed, report.trials
    );
    let width = report.table.rows.iter().map(|r| r.variant.to_string().len()).max().unwrap_or(0);
    for r in &report.table.rows {
        writeln!(
            out,
            "{:<width$}  {:.4} +- {:.4}",
            r.variant.to_string(),
            r.mean_auroc,
            r.std_across_trials
        )
        .unwrap();
    }
    Ok(out)
}
