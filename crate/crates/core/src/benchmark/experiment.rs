//! The evaluation pipeline: per pivot class build the split, distill the
//! students on normal training data, fit the densities, score the test set.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::auroc::auroc;
use super::datasets::Dataset;
use super::report::{mean, sample_std, ExperimentReport, TrialResult};
use super::split::{make_split, EvalSplit, Setting};
use super::variant::{FeatureSet, Scorer, Variant};
use crate::backbone::{Backbone, BackboneSpec, CacheOutcome, FeatureBank, FeatureCache};
use crate::density::{
    apply_whitener, combined_score, fit_gaussian, fit_gmm_with, fit_whitener, gaussian_log_likelihood,
    gmm_log_likelihood, knn_score, GmmConfig, DEFAULT_REG_LAMBDA,
};
use crate::distillation::{discrepancy_from_states, train_students_on_states, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureMeta, ScoreVector, SpaceTag};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// `seed` is replaced by each trial's seed.
    pub train: TrainConfig,
    pub reg_lambda: f64,
    /// Also whiten the fine-tuned features (at the variant's energy).
    pub whiten_finetuned: bool,
    /// Blocks used by variants that do not name a block count.
    pub blocks: Option<Vec<usize>>,
    /// Restrict evaluation to these pivot classes; all classes when `None`.
    pub pivots: Option<Vec<usize>>,
    pub gmm_max_iter: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            reg_lambda: DEFAULT_REG_LAMBDA,
            whiten_finetuned: false,
            blocks: None,
            pivots: None,
            gmm_max_iter: GmmConfig::default().max_iter,
        }
    }
}

/// Seed of trial `t` under `master`.
pub fn trial_seed(master: u64, t: usize) -> u64 {
    derive_seed(master, "trial", t as u64)
}

/// Blocks distilled for a block count `m`: the last `m`, or the configured /
/// default set when `m` is unspecified.
pub fn resolve_blocks(spec: &BackboneSpec, m: Option<usize>, configured: Option<&[usize]>) -> Result<Vec<usize>> {
    match (m, configured) {
        (Some(m), _) => spec.last_blocks(m),
        (None, Some(b)) => Ok(b.to_vec()),
        (None, None) => Ok(spec.default_block_indices()),
    }
}

/// A dataset encoded once by the frozen backbone.
#[derive(Debug, Clone)]
pub struct Experiment<'a> {
    pub dataset: &'a Dataset,
    pub backbone: &'a Backbone,
    pub train: FeatureBank,
    pub test: FeatureBank,
}

impl<'a> Experiment<'a> {
    pub fn prepare(dataset: &'a Dataset, backbone: &'a Backbone, cache: Option<&FeatureCache>) -> Result<Self> {
        let encode = |batch, split: &str| -> Result<FeatureBank> {
            match cache {
                Some(c) => {
                    let (bank, outcome) = c.get_or_extract(backbone, batch, &dataset.name, split)?;
                    if outcome != CacheOutcome::Hit {
                        log::info!("extracted {split} features of `{}` ({outcome:?})", dataset.name);
                    }
                    Ok(bank)
                }
                None => backbone.encode(batch),
            }
        };
        Ok(Self {
            dataset,
            backbone,
            train: encode(&dataset.train, "train")?,
            test: encode(&dataset.test, "test")?,
        })
    }

    fn pivots(&self, config: &PipelineConfig) -> Result<Vec<usize>> {
        match &config.pivots {
            Some(p) => {
                if let Some(&bad) = p.iter().find(|&&c| c >= self.dataset.num_classes) {
                    return Err(Error::config(format!("pivot class {bad} outside 0..{}", self.dataset.num_classes)));
                }
                Ok(p.clone())
            }
            None => Ok((0..self.dataset.num_classes).collect()),
        }
    }

    fn blocks_for(&self, v: &Variant, config: &PipelineConfig) -> Result<Option<Vec<usize>>> {
        let Some(m) = v.features.block_count() else {
            return Ok(None);
        };
        let vit = self.backbone.vit().ok_or_else(|| {
            Error::config(format!("variant `{v}` needs a transformer backbone, got `{}`", self.backbone.identifier()))
        })?;
        resolve_blocks(vit.spec(), m, config.blocks.as_deref()).map(Some)
    }

    /// Runs every variant over all pivot classes and `trials` seeds. Work
    /// shared between variants (whitening, student training) is done once
    /// per pivot and trial.
    pub fn run(
        &self,
        setting: Setting,
        config: &PipelineConfig,
        variants: &[Variant],
        trials: usize,
        master_seed: u64,
    ) -> Result<Vec<ExperimentReport>> {
        if variants.is_empty() {
            return Err(Error::config("no variants to evaluate"));
        }
        if trials == 0 {
            return Err(Error::config("trials must be >= 1"));
        }
        config.train.validate()?;
        let blocks: Vec<Option<Vec<usize>>> =
            variants.iter().map(|v| self.blocks_for(v, config)).collect::<Result<_>>()?;
        let pivots = self.pivots(config)?;
        let splits: Vec<EvalSplit> = pivots
            .iter()
            .map(|&c| make_split(self.dataset, setting, c))
            .collect::<Result<_>>()?;

        // outcomes[t][p][v]
        let mut outcomes = Vec::with_capacity(trials);
        for t in 0..trials {
            let seed = trial_seed(master_seed, t);
            let per_pivot: Vec<Vec<PivotOutcome>> = splits
                .par_iter()
                .map(|split| {
                    self.evaluate_split(split, config, variants, &blocks, seed)
                        .map_err(|e| e.context(format!("{setting} pivot class {}", split.pivot_class)))
                })
                .collect::<Result<_>>()?;
            outcomes.push(per_pivot);
        }

        let reports = variants
            .iter()
            .enumerate()
            .map(|(vi, v)| {
                let trial_results: Vec<TrialResult> = outcomes
                    .iter()
                    .enumerate()
                    .map(|(t, per_pivot)| {
                        let per_class: BTreeMap<usize, f64> =
                            pivots.iter().zip(per_pivot).map(|(&c, o)| (c, o[vi].auroc)).collect();
                        TrialResult {
                            seed: trial_seed(master_seed, t),
                            mean_auroc: mean(per_class.values().copied()),
                            per_class_auroc: per_class,
                        }
                    })
                    .collect();
                let per_class: BTreeMap<usize, f64> = pivots
                    .iter()
                    .map(|&c| (c, mean(trial_results.iter().map(|t| t.per_class_auroc[&c]))))
                    .collect();
                let retained_dims = pivots
                    .iter()
                    .zip(&outcomes[0])
                    .filter_map(|(&c, o)| o[vi].retained_dim.map(|r| (c, r)))
                    .collect();
                let trial_means: Vec<f64> = trial_results.iter().map(|t| t.mean_auroc).collect();
                ExperimentReport {
                    dataset: self.dataset.name.clone(),
                    backbone: self.backbone.identifier(),
                    setting,
                    variant: *v,
                    mean_auroc: mean(per_class.values().copied()),
                    per_class_auroc: per_class,
                    std_across_trials: sample_std(&trial_means),
                    trials: trial_results,
                    retained_dims,
                    block_indices: blocks[vi].clone().unwrap_or_default(),
                    master_seed,
                    config: config.clone(),
                }
            })
            .collect();
        Ok(reports)
    }

    /// Scores of every variant on the test set of one split.
    pub fn score_split(
        &self,
        split: &EvalSplit,
        config: &PipelineConfig,
        variants: &[Variant],
        seed: u64,
    ) -> Result<Vec<ScoreVector>> {
        let blocks: Vec<Option<Vec<usize>>> =
            variants.iter().map(|v| self.blocks_for(v, config)).collect::<Result<_>>()?;
        Ok(self
            .score_variants(split, config, variants, &blocks, seed)?
            .into_iter()
            .map(|(s, _)| s)
            .collect())
    }

    fn evaluate_split(
        &self,
        split: &EvalSplit,
        config: &PipelineConfig,
        variants: &[Variant],
        blocks: &[Option<Vec<usize>>],
        seed: u64,
    ) -> Result<Vec<PivotOutcome>> {
        self.score_variants(split, config, variants, blocks, seed)?
            .into_iter()
            .map(|(scores, retained_dim)| {
                Ok(PivotOutcome {
                    auroc: auroc(&scores, &split.anomaly_labels)?,
                    retained_dim,
                })
            })
            .collect()
    }

    fn score_variants(
        &self,
        split: &EvalSplit,
        config: &PipelineConfig,
        variants: &[Variant],
        blocks: &[Option<Vec<usize>>],
        seed: u64,
    ) -> Result<Vec<(ScoreVector, Option<usize>)>> {
        let meta = |s: &str| FeatureMeta {
            backbone: self.backbone.identifier(),
            split: format!("{}:{}:{s}", split.setting, split.pivot_class),
        };
        let train_bank = self.train.select(&split.train_indices);
        let test_bank = self.test.select(&split.test_indices);
        let zp_train = FeatureMatrix::new(train_bank.pretrained.clone(), SpaceTag::Pretrained, meta("train"))?;
        let zp_test = FeatureMatrix::new(test_bank.pretrained.clone(), SpaceTag::Pretrained, meta("test"))?;

        let mut pretrained: HashMap<(u64, Scorer), (ScoreVector, usize)> = HashMap::new();
        for v in variants.iter().filter(|v| v.features.uses_pretrained()) {
            let key = (v.energy.to_bits(), v.scorer);
            if pretrained.contains_key(&key) {
                continue;
            }
            let w = fit_whitener(&zp_train, v.energy)?;
            let tr = apply_whitener(&w, &zp_train)?;
            let te = apply_whitener(&w, &zp_test)?;
            let scores = match v.scorer {
                Scorer::Gaussian => gaussian_log_likelihood(&fit_gaussian(&tr, config.reg_lambda)?, &te)?,
                Scorer::Knn(k) => knn_score(&tr, &te, k)?,
                Scorer::Gmm(k) => {
                    let gmm = fit_gmm_with(
                        &tr,
                        &GmmConfig {
                            k,
                            max_iter: config.gmm_max_iter,
                            reg_lambda: config.reg_lambda,
                            seed: derive_seed(seed, "gmm", split.pivot_class as u64),
                            ..GmmConfig::default()
                        },
                    )?;
                    gmm_log_likelihood(&gmm, &te)?
                }
            };
            pretrained.insert(key, (scores, w.output_dim()));
        }

        let union: BTreeSet<usize> = blocks.iter().flatten().flatten().copied().collect();
        let finetuned = if union.is_empty() {
            None
        } else {
            let vit = self.backbone.vit().expect("checked by blocks_for");
            let (tr_states, te_states) = match (&train_bank.hidden, &test_bank.hidden) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::invalid("feature bank lacks block states")),
            };
            let all: Vec<usize> = union.into_iter().collect();
            let train_cfg = TrainConfig {
                seed,
                ..config.train.clone()
            };
            let ensemble = train_students_on_states(vit, tr_states, &all, &train_cfg)?;
            let zf_train = discrepancy_from_states(vit, tr_states, &ensemble)?;
            let zf_test = discrepancy_from_states(vit, te_states, &ensemble)?;
            Some((all, zf_train.values, zf_test.values))
        };

        let mut out = Vec::with_capacity(variants.len());
        for (v, b) in variants.iter().zip(blocks) {
            let zp = pretrained.get(&(v.energy.to_bits(), v.scorer));
            let zf = match (b, &finetuned) {
                (Some(b), Some((all, tr, te))) => {
                    let cols: Vec<usize> = b.iter().map(|j| all.binary_search(j).expect("in union")).collect();
                    Some(self.finetuned_scores(
                        tr.select(Axis(1), &cols),
                        te.select(Axis(1), &cols),
                        v,
                        config,
                        &meta,
                    )?)
                }
                _ => None,
            };
            let entry = match (v.features, zp, zf) {
                (FeatureSet::Pretrained, Some((s, r)), _) => (s.clone(), Some(*r)),
                (FeatureSet::Finetuned { .. }, _, Some(f)) => (f, None),
                (FeatureSet::Combined { .. }, Some((s, r)), Some(f)) => (combined_score(s, &f)?, Some(*r)),
                _ => unreachable!("scores computed for every requested space"),
            };
            out.push(entry);
        }
        Ok(out)
    }

    fn finetuned_scores(
        &self,
        train: Array2<f64>,
        test: Array2<f64>,
        v: &Variant,
        config: &PipelineConfig,
        meta: &dyn Fn(&str) -> FeatureMeta,
    ) -> Result<ScoreVector> {
        let mut tr = FeatureMatrix::new(train, SpaceTag::Finetuned, meta("train"))?;
        let mut te = FeatureMatrix::new(test, SpaceTag::Finetuned, meta("test"))?;
        if config.whiten_finetuned {
            let w = fit_whitener(&tr, v.energy)?;
            tr = apply_whitener(&w, &tr)?;
            te = apply_whitener(&w, &te)?;
        }
        gaussian_log_likelihood(&fit_gaussian(&tr, config.reg_lambda)?, &te)
    }
}

#[derive(Debug, Clone, Copy)]
struct PivotOutcome {
    auroc: f64,
    retained_dim: Option<usize>,
}

/// One variant, all pivots, `trials` seeds.
pub fn run_experiment(
    ds: &Dataset,
    backbone: &Backbone,
    setting: Setting,
    config: &PipelineConfig,
    variant: &Variant,
    trials: usize,
    master_seed: u64,
) -> Result<ExperimentReport> {
    let exp = Experiment::prepare(ds, backbone, None)?;
    let mut r = exp.run(setting, config, std::slice::from_ref(variant), trials, master_seed)?;
    Ok(r.remove(0))
}

/// One row per variant of an ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub dataset: String,
    pub setting: Setting,
    pub rows: Vec<ExperimentReport>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        super::report::summary_csv(&self.rows)
    }

    pub fn row(&self, variant: &Variant) -> Option<&ExperimentReport> {
        self.rows.iter().find(|r| &r.variant == variant)
    }
}

pub fn ablation_runner(
    ds: &Dataset,
    backbone: &Backbone,
    setting: Setting,
    config: &PipelineConfig,
    variants: &[Variant],
    trials: usize,
    master_seed: u64,
) -> Result<AblationTable> {
    let exp = Experiment::prepare(ds, backbone, None)?;
    Ok(AblationTable {
        dataset: ds.name.clone(),
        setting,
        rows: exp.run(setting, config, variants, trials, master_seed)?,
    })
}
