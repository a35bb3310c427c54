use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which feature spaces feed the score. `m` is the number of last blocks
/// distilled; `None` means the backbone's default block set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureSet {
    Pretrained,
    Finetuned { m: Option<usize> },
    Combined { m: Option<usize> },
}

impl FeatureSet {
    pub fn uses_pretrained(&self) -> bool {
        !matches!(self, FeatureSet::Finetuned { .. })
    }

    pub fn block_count(&self) -> Option<Option<usize>> {
        match *self {
            FeatureSet::Pretrained => None,
            FeatureSet::Finetuned { m } | FeatureSet::Combined { m } => Some(m),
        }
    }
}

/// Density model for the pretrained space. The fine-tuned space is always
/// modeled by a single Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scorer {
    Gaussian,
    Knn(usize),
    Gmm(usize),
}

/// One row of an ablation: `<features>:<scorer>:<energy>`, for example
/// `combined-m10:gaussian:0.90`, `pretrained:knn2:0.90` or `pretrained:gmm3:0.95`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    pub features: FeatureSet,
    pub scorer: Scorer,
    pub energy: f64,
}

pub const DEFAULT_ENERGY: f64 = 0.90;

impl Variant {
    pub fn new(features: FeatureSet, scorer: Scorer, energy: f64) -> Result<Self> {
        if !(energy > 0.0 && energy <= 1.0) {
            return Err(Error::config(format!("energy threshold {energy} outside (0, 1]")));
        }
        match scorer {
            Scorer::Knn(0) | Scorer::Gmm(0) => return Err(Error::config("scorer needs k >= 1")),
            _ => {}
        }
        if let Some(Some(0)) = features.block_count() {
            return Err(Error::config("block count must be >= 1"));
        }
        Ok(Self { features, scorer, energy })
    }

    /// The full method: pretrained plus default fine-tuned blocks, Gaussian, 90%.
    pub fn full() -> Self {
        Self {
            features: FeatureSet::Combined { m: None },
            scorer: Scorer::Gaussian,
            energy: DEFAULT_ENERGY,
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (name, m) = match *self {
            FeatureSet::Pretrained => return f.write_str("pretrained"),
            FeatureSet::Finetuned { m } => ("finetuned", m),
            FeatureSet::Combined { m } => ("combined", m),
        };
        match m {
            Some(m) => write!(f, "{name}-m{m}"),
            None => f.write_str(name),
        }
    }
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scorer::Gaussian => f.write_str("gaussian"),
            Scorer::Knn(k) => write!(f, "knn{k}"),
            Scorer::Gmm(k) => write!(f, "gmm{k}"),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let short = format!("{:.2}", self.energy);
        let energy = if short.parse::<f64>() == Ok(self.energy) {
            short
        } else {
            self.energy.to_string()
        };
        write!(f, "{}:{}:{}", self.features, self.scorer, energy)
    }
}

fn parse_features(s: &str) -> Result<FeatureSet> {
    let (name, m) = match s.split_once("-m") {
        Some((name, m)) => {
            let m = m
                .parse::<usize>()
                .map_err(|_| Error::config(format!("bad block count in `{s}`")))?;
            (name, Some(m))
        }
        None => (s, None),
    };
    match (name, m) {
        ("pretrained", None) => Ok(FeatureSet::Pretrained),
        ("finetuned", m) => Ok(FeatureSet::Finetuned { m }),
        ("combined", m) => Ok(FeatureSet::Combined { m }),
        _ => Err(Error::config(format!(
            "unknown feature set `{s}` (pretrained | finetuned[-mN] | combined[-mN])"
        ))),
    }
}

fn parse_scorer(s: &str) -> Result<Scorer> {
    let k = |rest: &str| {
        rest.parse::<usize>()
            .map_err(|_| Error::config(format!("bad k in scorer `{s}`")))
    };
    if s == "gaussian" {
        Ok(Scorer::Gaussian)
    } else if let Some(rest) = s.strip_prefix("knn") {
        Ok(Scorer::Knn(k(rest)?))
    } else if let Some(rest) = s.strip_prefix("gmm") {
        Ok(Scorer::Gmm(k(rest)?))
    } else {
        Err(Error::config(format!("unknown scorer `{s}` (gaussian | knnK | gmmK)")))
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// Missing trailing parts default to `gaussian` and `0.90`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        if parts.len() > 3 {
            return Err(Error::config(format!("variant `{s}` has too many parts")));
        }
        let features = parse_features(parts[0])?;
        let scorer = parts.get(1).map_or(Ok(Scorer::Gaussian), |p| parse_scorer(p))?;
        let energy = match parts.get(2) {
            Some(e) => e
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad energy threshold `{e}`")))?,
            None => DEFAULT_ENERGY,
        };
        Variant::new(features, scorer, energy)
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Pretrained only, fine-tuned with 1/5/10 blocks, combined with 1/5/10 blocks.
pub fn block_ablation_variants() -> Vec<Variant> {
    let mut v = vec![Variant {
        features: FeatureSet::Pretrained,
        scorer: Scorer::Gaussian,
        energy: DEFAULT_ENERGY,
    }];
    for m in [1, 5, 10] {
        v.push(Variant {
            features: FeatureSet::Finetuned { m: Some(m) },
            scorer: Scorer::Gaussian,
            energy: DEFAULT_ENERGY,
        });
    }
    for m in [1, 5, 10] {
        v.push(Variant {
            features: FeatureSet::Combined { m: Some(m) },
            scorer: Scorer::Gaussian,
            energy: DEFAULT_ENERGY,
        });
    }
    v
}

/// Pretrained-space modeling functions: kNN for several k, Gaussian, GMM.
pub fn scorer_ablation_variants() -> Vec<Variant> {
    [Scorer::Knn(1), Scorer::Knn(2), Scorer::Knn(5), Scorer::Gaussian, Scorer::Gmm(2), Scorer::Gmm(3)]
        .into_iter()
        .map(|scorer| Variant {
            features: FeatureSet::Pretrained,
            scorer,
            energy: DEFAULT_ENERGY,
        })
        .collect()
}

/// The full method at energy thresholds 0.85, 0.90 and 0.95.
pub fn energy_ablation_variants() -> Vec<Variant> {
    [0.85, 0.90, 0.95]
        .into_iter()
        .map(|energy| Variant { energy, ..Variant::full() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        for s in ["combined-m10:gaussian:0.90", "pretrained:knn2:0.85", "finetuned:gaussian:0.95", "pretrained:gmm3:0.925"] {
            assert_eq!(s.parse::<Variant>().unwrap().to_string(), s);
        }
        assert_eq!("combined".parse::<Variant>().unwrap(), Variant::full());
    }

    #[test]
    fn rejects_unknown() {
        for s in ["pretrained-m3", "mixed", "pretrained:svm", "pretrained:knn0", "combined:gaussian:1.5", "a:b:c:d"] {
            assert!(s.parse::<Variant>().is_err(), "{s}");
        }
    }

    #[test]
    fn block_layout_has_seven_rows() {
        assert_eq!(block_ablation_variants().len(), 7);
    }
}
