//! Pretrained vision-transformer adapter: preprocessing, penultimate-layer
//! features and per-block activations, plus the feature cache.

mod block;
mod cache;
mod preprocess;
mod types;
mod vit;

use ndarray::{concatenate, Array2, Array3, Axis};
use rayon::prelude::*;

pub use block::{LayerNorm, TransformerBlock, LAYER_NORM_EPS, TENSOR_NAMES};
pub(crate) use block::flatten;
pub use cache::{CacheOutcome, FeatureCache, SidecarMeta};
pub use preprocess::preprocess;
pub use types::{BackboneSpec, BlockOutput, ImageBatch, NormalizationStats, TapPoint};
pub(crate) use vit::block_from_archive;
pub use vit::{HiddenStates, VisionTransformer};

use crate::error::{Error, Result};

const ENCODE_CHUNK: usize = 64;

/// Everything the pipeline needs from the frozen backbone for a set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    pub ids: Vec<String>,
    /// `n x d` pretrained features.
    pub pretrained: Array2<f64>,
    /// Block-boundary states; `None` for backbones without blocks.
    pub hidden: Option<HiddenStates>,
}

impl FeatureBank {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            pretrained: self.pretrained.select(Axis(0), indices),
            hidden: self.hidden.as_ref().map(|h| h.select(indices)),
        }
    }

    /// Rounds every value through `f32`, matching what the cache stores.
    pub fn quantized(mut self) -> Self {
        let q = |v: &mut f64| *v = f64::from(*v as f32);
        self.pretrained.iter_mut().for_each(q);
        if let Some(h) = self.hidden.take() {
            let states = h
                .states()
                .iter()
                .map(|s| s.mapv(|v| f64::from(v as f32)))
                .collect();
            self.hidden = Some(HiddenStates::new(states).expect("same shapes"));
        }
        self
    }
}

/// The feature extractor used by the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Backbone {
    /// Flattened pixels are the features; no blocks, no preprocessing.
    /// Used for vector-valued synthetic data.
    Identity,
    Vit(Box<VisionTransformer>),
}

impl Backbone {
    pub fn identifier(&self) -> String {
        match self {
            Backbone::Identity => "identity".into(),
            Backbone::Vit(v) => v.identifier(),
        }
    }

    /// Preprocessing parameters that affect extracted values, for cache keys.
    pub fn preprocessing_tag(&self) -> String {
        match self {
            Backbone::Identity => "none".into(),
            Backbone::Vit(v) => {
                let s = v.spec();
                format!(
                    "res={};mean={:?};std={:?};tap={:?}",
                    s.input_resolution, s.normalization.mean, s.normalization.std, s.tap
                )
            }
        }
    }

    pub fn vit(&self) -> Option<&VisionTransformer> {
        match self {
            Backbone::Identity => None,
            Backbone::Vit(v) => Some(v),
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.vit().map_or(0, |v| v.spec().num_blocks)
    }

    /// Extracts pretrained features and block states from raw pixels.
    pub fn encode(&self, raw: &ImageBatch) -> Result<FeatureBank> {
        match self {
            Backbone::Identity => {
                let (n, h, w, c) = raw.pixels().dim();
                let pretrained = raw
                    .pixels()
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((n, h * w * c))
                    .map_err(|e| Error::invalid(e.to_string()))?;
                Ok(FeatureBank {
                    ids: raw.ids().to_vec(),
                    pretrained,
                    hidden: None,
                })
            }
            Backbone::Vit(vit) => {
                let starts: Vec<usize> = (0..raw.len()).step_by(ENCODE_CHUNK).collect();
                let parts: Vec<(Array2<f64>, Vec<Array3<f64>>)> = starts
                    .par_iter()
                    .map(|&start| {
                        let idx: Vec<usize> = (start..(start + ENCODE_CHUNK).min(raw.len())).collect();
                        let chunk = preprocess(&raw.select(&idx)?, vit.spec())?;
                        let states = vit.hidden_states(&chunk)?;
                        let pre = vit.pretrained_from_states(&states)?;
                        Ok((pre, states.states().to_vec()))
                    })
                    .collect::<Result<_>>()?;
                let pre_views: Vec<_> = parts.iter().map(|(p, _)| p.view()).collect();
                let pretrained = concatenate(Axis(0), &pre_views).map_err(|e| Error::invalid(e.to_string()))?;
                let num_states = parts[0].1.len();
                let states = (0..num_states)
                    .map(|k| {
                        let views: Vec<_> = parts.iter().map(|(_, s)| s[k].view()).collect();
                        concatenate(Axis(0), &views).map_err(|e| Error::invalid(e.to_string()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(FeatureBank {
                    ids: raw.ids().to_vec(),
                    pretrained,
                    hidden: Some(HiddenStates::new(states)?),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng;
    use ndarray::Array4;
    use rand::Rng;

    #[test]
    fn chunked_encoding_matches_direct_extraction() {
        let vit = VisionTransformer::mock(BackboneSpec::mock(), 4).unwrap();
        let mut r = rng(1);
        let px = Array4::from_shape_simple_fn((ENCODE_CHUNK + 7, 32, 32, 3), || r.random::<f64>());
        let raw = ImageBatch::with_sequential_ids(px, None, "c").unwrap();
        let bank = Backbone::Vit(Box::new(vit.clone())).encode(&raw).unwrap();
        let direct = vit.extract_pretrained(&preprocess(&raw, vit.spec()).unwrap()).unwrap();
        assert_eq!(bank.pretrained, direct.values());
        let h = bank.hidden.as_ref().unwrap();
        assert_eq!(h.num_blocks(), 12);
        assert_eq!(h.num_samples(), ENCODE_CHUNK + 7);
    }

    #[test]
    fn identity_flattens_pixels() {
        let px = Array4::from_shape_fn((2, 1, 3, 1), |(i, _, j, _)| (i * 3 + j) as f64 - 2.5);
        let raw = ImageBatch::with_sequential_ids(px, Some(vec![0, 1]), "v").unwrap();
        let bank = Backbone::Identity.encode(&raw).unwrap();
        assert_eq!(bank.pretrained, ndarray::array![[-2.5, -1.5, -0.5], [0.5, 1.5, 2.5]]);
        assert!(bank.hidden.is_none());
    }
}
