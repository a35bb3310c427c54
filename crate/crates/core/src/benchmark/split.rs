use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::datasets::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// One class is normal; every other class is anomalous.
    Unimodal,
    /// Every class but one is normal (labels discarded); the held-out class is anomalous.
    Multimodal,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Unimodal => "unimodal",
            Setting::Multimodal => "multimodal",
        })
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unimodal" => Ok(Setting::Unimodal),
            "multimodal" => Ok(Setting::Multimodal),
            other => Err(Error::config(format!("unknown setting `{other}` (unimodal | multimodal)"))),
        }
    }
}

/// Train/test selection for one pivot class. Training labels are not kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub setting: Setting,
    pub pivot_class: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Aligned with `test_ids`; `true` marks an anomaly.
    pub anomaly_labels: Vec<bool>,
    /// Row indices into the dataset's train and test batches.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl EvalSplit {
    pub fn anomaly_fraction(&self) -> f64 {
        self.anomaly_labels.iter().filter(|&&a| a).count() as f64 / self.anomaly_labels.len() as f64
    }
}

pub fn make_split(ds: &Dataset, setting: Setting, pivot_class: usize) -> Result<EvalSplit> {
    if pivot_class >= ds.num_classes {
        return Err(Error::config(format!(
            "class {pivot_class} outside 0..{} of `{}`",
            ds.num_classes, ds.name
        )));
    }
    let is_normal = |label: usize| match setting {
        Setting::Unimodal => label == pivot_class,
        Setting::Multimodal => label != pivot_class,
    };
    let train_indices: Vec<usize> = (0..ds.train.len()).filter(|&i| is_normal(ds.train_labels()[i])).collect();
    if train_indices.is_empty() {
        return Err(Error::invalid(format!(
            "{setting} split for class {pivot_class} of `{}` has no training samples",
            ds.name
        )));
    }
    let test_indices: Vec<usize> = (0..ds.test.len()).collect();
    let anomaly_labels = ds.test_labels().iter().map(|&l| !is_normal(l)).collect();
    Ok(EvalSplit {
        setting,
        pivot_class,
        train_ids: train_indices.iter().map(|&i| ds.train.ids()[i].clone()).collect(),
        test_ids: ds.test.ids().to_vec(),
        anomaly_labels,
        train_indices,
        test_indices,
    })
}

pub fn make_unimodal_split(ds: &Dataset, normal_class: usize) -> Result<EvalSplit> {
    make_split(ds, Setting::Unimodal, normal_class)
}

pub fn make_multimodal_split(ds: &Dataset, abnormal_class: usize) -> Result<EvalSplit> {
    make_split(ds, Setting::Multimodal, abnormal_class)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::ImageBatch;
    use ndarray::Array4;

    fn balanced(k: usize, per: usize) -> Dataset {
        let n = k * per;
        let b = || {
            ImageBatch::with_sequential_ids(Array4::zeros((n, 1, 1, 1)), Some((0..n).map(|i| i % k).collect()), "s")
                .unwrap()
        };
        Dataset::new("b", (0..k).map(|c| c.to_string()).collect(), b(), b()).unwrap()
    }

    #[test]
    fn anomaly_fractions() {
        let ds = balanced(10, 5);
        assert!((make_unimodal_split(&ds, 3).unwrap().anomaly_fraction() - 0.9).abs() < 1e-15);
        assert!((make_multimodal_split(&ds, 3).unwrap().anomaly_fraction() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn two_class_symmetry() {
        let ds = balanced(2, 4);
        let mut u = make_unimodal_split(&ds, 0).unwrap();
        let m = make_multimodal_split(&ds, 1).unwrap();
        u.setting = Setting::Multimodal;
        u.pivot_class = 1;
        assert_eq!(u, m);
    }

    #[test]
    fn bad_class_and_parse() {
        let ds = balanced(2, 2);
        assert!(make_unimodal_split(&ds, 2).is_err());
        assert_eq!("multimodal".parse::<Setting>().unwrap(), Setting::Multimodal);
        assert!("both".parse::<Setting>().is_err());
    }
}
