//! Unimodal evaluation where the scorer cannot tell the normal class from one
//! anomalous class: the AUROC stays high while the usable precision is poor.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::benchmark::auroc_values;
use crate::error::{Error, Result};
use crate::seed::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "class")]
pub enum ConfusionMode {
    /// The normal class is ranked above every anomaly.
    None,
    /// Anomalous class `c` (1-based among anomalies, `1..num_classes`) is
    /// scored like the normal class.
    Class(usize),
    /// Every sample receives the same score.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflationConfig {
    pub num_classes: usize,
    pub normal_count: usize,
    pub abnormal_per_class: usize,
    pub confusion: ConfusionMode,
    pub seed: u64,
}

impl InflationConfig {
    /// 20 classes, 500 normal and 19 x 500 = 9,500 anomalous samples, one confused class.
    pub fn coarse_cifar100() -> Self {
        Self {
            num_classes: 20,
            normal_count: 500,
            abnormal_per_class: 500,
            confusion: ConfusionMode::Class(1),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflationResult {
    pub auroc: f64,
    /// Fraction of normal samples among those above the natural threshold.
    pub precision_at_threshold: f64,
    /// Midpoint of the widest gap between consecutive distinct scores.
    pub threshold: f64,
    pub predicted_normal: usize,
    pub narrative: String,
}

/// Stratified draws in `[lo, lo + 1)`: sample `i` of `n` falls in stratum `i`.
fn stratified(r: &mut impl Rng, n: usize, lo: f64) -> Vec<f64> {
    (0..n).map(|i| lo + (i as f64 + r.random::<f64>()) / n as f64).collect()
}

/// Widest gap between consecutive distinct sorted scores; `None` if all equal.
fn natural_threshold(scores: &[f64]) -> Option<f64> {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    s.windows(2)
        .max_by(|a, b| (a[1] - a[0]).total_cmp(&(b[1] - b[0])))
        .map(|w| 0.5 * (w[0] + w[1]))
}

pub fn auroc_inflation_demo(cfg: &InflationConfig) -> Result<InflationResult> {
    if cfg.num_classes < 3 {
        return Err(Error::config("the inflation demo needs at least three classes"));
    }
    if cfg.normal_count == 0 || cfg.abnormal_per_class == 0 {
        return Err(Error::config("sample counts must be positive"));
    }
    if let ConfusionMode::Class(c) = cfg.confusion {
        if c == 0 || c >= cfg.num_classes {
            return Err(Error::config(format!("confused class must lie in 1..{}", cfg.num_classes)));
        }
    }
    let mut r = rng(cfg.seed);
    let mut scores = Vec::new();
    let mut anomaly = Vec::new();
    let mut push = |s: Vec<f64>, is_anomaly: bool| {
        anomaly.extend(std::iter::repeat_n(is_anomaly, s.len()));
        scores.extend(s);
    };
    match cfg.confusion {
        ConfusionMode::All => {
            push(vec![1.0; cfg.normal_count], false);
            push(vec![1.0; cfg.abnormal_per_class * (cfg.num_classes - 1)], true);
        }
        mode => {
            push(stratified(&mut r, cfg.normal_count, 2.0), false);
            for c in 1..cfg.num_classes {
                let lo = if mode == ConfusionMode::Class(c) { 2.0 } else { 0.0 };
                push(stratified(&mut r, cfg.abnormal_per_class, lo), true);
            }
        }
    }
    // Sample order carries no information.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.shuffle(&mut r);
    let scores: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
    let anomaly: Vec<bool> = order.iter().map(|&i| anomaly[i]).collect();

    let auroc = auroc_values(&scores, &anomaly)?;
    let threshold = natural_threshold(&scores).unwrap_or(scores[0]);
    let above: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    let predicted_normal = above.iter().filter(|&&a| a).count();
    let true_normal = above.iter().zip(&anomaly).filter(|(&a, &an)| a && !an).count();
    let precision = true_normal as f64 / predicted_normal as f64;
    let narrative = format!(
        "{} classes, {} normal and {} anomalous test samples: AUROC {auroc:.3}, yet only {:.1}% of the \
         {predicted_normal} samples above the natural threshold are normal.",
        cfg.num_classes,
        cfg.normal_count,
        cfg.abnormal_per_class * (cfg.num_classes - 1),
        100.0 * precision
    );
    Ok(InflationResult {
        auroc,
        precision_at_threshold: precision,
        threshold,
        predicted_normal,
        narrative,
    })
}
