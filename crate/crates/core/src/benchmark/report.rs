use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::experiment::PipelineConfig;
use super::split::Setting;
use super::variant::Variant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub per_class_auroc: BTreeMap<usize, f64>,
    pub mean_auroc: f64,
}

/// Outcome of one variant over every pivot class and trial. Contains no
/// timing so that identical runs serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub backbone: String,
    pub setting: Setting,
    pub variant: Variant,
    /// Per pivot class, averaged over trials.
    pub per_class_auroc: BTreeMap<usize, f64>,
    /// Arithmetic mean of `per_class_auroc`.
    pub mean_auroc: f64,
    pub trials: Vec<TrialResult>,
    /// Sample standard deviation of the per-trial means (0 for one trial).
    pub std_across_trials: f64,
    /// Whitened pretrained dimension per pivot class (absent for fine-tuned-only variants).
    pub retained_dims: BTreeMap<usize, usize>,
    /// Blocks distilled for this variant (empty for pretrained-only).
    pub block_indices: Vec<usize>,
    pub master_seed: u64,
    pub config: PipelineConfig,
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values.iter().copied());
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Flat table, one row per (variant, pivot class).
pub fn reports_to_csv(reports: &[ExperimentReport]) -> String {
    let mut out = String::from("dataset,setting,variant,pivot_class,auroc,retained_dim\n");
    for r in reports {
        for (&c, &a) in &r.per_class_auroc {
            let dim = r.retained_dims.get(&c).map_or(String::new(), |d| d.to_string());
            let _ = writeln!(out, "{},{},{},{},{:.6},{}", r.dataset, r.setting, r.variant, c, a, dim);
        }
    }
    out
}

/// Summary table, one row per variant.
pub fn summary_csv(reports: &[ExperimentReport]) -> String {
    let mut out = String::from("dataset,setting,variant,mean_auroc,std_across_trials,trials\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{}",
            r.dataset,
            r.setting,
            r.variant,
            r.mean_auroc,
            r.std_across_trials,
            r.trials.len()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn std_is_sample_std() {
        assert_eq!(sample_std(&[1.0]), 0.0);
        assert!((sample_std(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
    }
}
