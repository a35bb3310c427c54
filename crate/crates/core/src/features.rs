use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which feature space a matrix or score vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceTag {
    /// Penultimate-layer embedding of the frozen backbone.
    Pretrained,
    /// Per-block teacher-student discrepancies.
    Finetuned,
    /// Sum of the two log-scores.
    Combined,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub backbone: String,
    pub split: String,
}

/// `n x d` per-sample features with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
    space: SpaceTag,
    meta: FeatureMeta,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>, space: SpaceTag, meta: FeatureMeta) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::invalid("feature matrix has no rows"));
        }
        if let Some((i, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let d = values.ncols().max(1);
            return Err(Error::numerical(format!(
                "non-finite feature at row {}, column {}",
                i / d,
                i % d
            )));
        }
        Ok(Self { values, space, meta })
    }

    /// Untagged matrix, handy for tests and ad-hoc data.
    pub fn from_array(values: Array2<f64>) -> Result<Self> {
        Self::new(values, SpaceTag::Pretrained, FeatureMeta::default())
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn space(&self) -> SpaceTag {
        self.space
    }

    pub fn meta(&self) -> &FeatureMeta {
        &self.meta
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            self.values.select(Axis(0), indices),
            self.space,
            self.meta.clone(),
        )
    }

    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        Self::new(values, self.space, self.meta.clone())
    }
}

/// Per-sample log-scores; higher means more normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub values: Array1<f64>,
    pub space: SpaceTag,
}

impl ScoreVector {
    pub fn new(values: Array1<f64>, space: SpaceTag) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite score"));
        }
        Ok(Self { values, space })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice().expect("contiguous scores")
    }
}
