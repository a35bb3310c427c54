use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayView3, Axis};
use rand::Rng;

use super::block::{flatten, randn, randn1, LayerNorm, TransformerBlock, TENSOR_NAMES};
use super::types::{BackboneSpec, BlockOutput, ImageBatch, TapPoint};
use crate::archive::{to_array1, to_array2, TensorArchive};
use crate::error::{ensure_dim, Error, Result};
use crate::features::{FeatureMatrix, FeatureMeta, SpaceTag};
use crate::seed::rng;

/// Residual-stream states of a batch at every block boundary.
///
/// `states[0]` is the token embedding entering block 0 and `states[j + 1]`
/// is the output of block `j`. Each state is `n x T x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    states: Vec<Array3<f64>>,
}

impl HiddenStates {
    pub fn new(states: Vec<Array3<f64>>) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| Error::invalid("hidden states need at least the embedding"))?;
        let dim = first.dim();
        if states.iter().any(|s| s.dim() != dim) {
            return Err(Error::invalid("hidden states have inconsistent shapes"));
        }
        Ok(Self { states })
    }

    pub fn num_samples(&self) -> usize {
        self.states[0].len_of(Axis(0))
    }

    pub fn num_blocks(&self) -> usize {
        self.states.len() - 1
    }

    pub fn tokens(&self) -> usize {
        self.states[0].len_of(Axis(1))
    }

    pub fn dim(&self) -> usize {
        self.states[0].len_of(Axis(2))
    }

    pub fn input_of(&self, block: usize) -> ArrayView3<'_, f64> {
        self.states[block].view()
    }

    pub fn output_of(&self, block: usize) -> ArrayView3<'_, f64> {
        self.states[block + 1].view()
    }

    pub fn states(&self) -> &[Array3<f64>] {
        &self.states
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            states: self
                .states
                .iter()
                .map(|s| s.select(Axis(0), indices))
                .collect(),
        }
    }
}

/// A vision transformer with explicit weights.
///
/// [`VisionTransformer::mock`] builds a small network from a recorded seed so
/// the full pipeline runs on CPU without pretrained checkpoints;
/// [`VisionTransformer::load`] reads weights written by [`VisionTransformer::save`].
#[derive(Debug, Clone, PartialEq)]
pub struct VisionTransformer {
    spec: BackboneSpec,
    seed: Option<u64>,
    /// `patch_dim x D`, patch pixels flattened as `(row, col, channel)`.
    patch_weight: Array2<f64>,
    patch_bias: Array1<f64>,
    cls_token: Array1<f64>,
    pos_embed: Array2<f64>,
    blocks: Vec<TransformerBlock>,
    final_norm: LayerNorm,
}

/// Scale of the residual-branch output weights in mock networks. Below 1 the
/// blocks stay close to identity, so deep mock stacks keep input information.
const MOCK_RESIDUAL_GAIN: f64 = 0.5;

impl VisionTransformer {
    /// Seeded random weights. Identical `(spec, seed)` give identical weights.
    pub fn mock(spec: BackboneSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut r = rng(seed);
        Ok(Self::random_with(&mut r, spec, Some(seed)))
    }

    fn random_with<R: Rng>(r: &mut R, spec: BackboneSpec, seed: Option<u64>) -> Self {
        let d = spec.embed_dim;
        let patch_dim = spec.patch_dim();
        let patch_weight = randn(r, (patch_dim, d), 1.0 / (patch_dim as f64).sqrt());
        let patch_bias = randn1(r, d, 0.02);
        let cls_token = randn1(r, d, 0.5);
        let pos_embed = randn(r, (spec.num_tokens(), d), 0.1);
        let blocks = (0..spec.num_blocks)
            .map(|_| {
                let mut b = TransformerBlock::random(r, d, spec.num_heads, spec.mlp_dim, 1.0, 0.02, true);
                b.proj_weight *= MOCK_RESIDUAL_GAIN;
                b.fc2_weight *= MOCK_RESIDUAL_GAIN;
                b
            })
            .collect();
        Self {
            spec,
            seed,
            patch_weight,
            patch_bias,
            cls_token,
            pos_embed,
            blocks,
            final_norm: LayerNorm::identity(d),
        }
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    /// Identifier including the weight seed for mock networks, used in cache keys.
    pub fn identifier(&self) -> String {
        match self.seed {
            Some(seed) => format!("{}#seed={seed}", self.spec.identifier),
            None => self.spec.identifier.clone(),
        }
    }

    pub fn block(&self, index: usize) -> Result<&TransformerBlock> {
        self.blocks.get(index).ok_or_else(|| {
            Error::invalid(format!(
                "block index {index} out of range for {} blocks",
                self.spec.num_blocks
            ))
        })
    }

    pub fn final_norm(&self) -> &LayerNorm {
        &self.final_norm
    }

    fn check_batch(&self, batch: &ImageBatch) -> Result<()> {
        let (h, w, c) = batch.image_shape();
        ensure_dim(self.spec.input_resolution, h, "image height vs input_resolution")?;
        ensure_dim(self.spec.input_resolution, w, "image width vs input_resolution")?;
        ensure_dim(3, c, "image channels (run preprocess first)")?;
        Ok(())
    }

    /// Patch + class-token embedding with positions, `n x T x D`.
    pub fn embed(&self, batch: &ImageBatch) -> Result<Array3<f64>> {
        self.check_batch(batch)?;
        let p = self.spec.patch_size;
        let side = self.spec.input_resolution / p;
        let n = batch.len();
        let t = self.spec.num_tokens();
        let d = self.spec.embed_dim;
        let mut patches = Array2::<f64>::zeros((n * side * side, self.spec.patch_dim()));
        for (i, img) in batch.pixels().outer_iter().enumerate() {
            for py in 0..side {
                for px in 0..side {
                    let row = i * side * side + py * side + px;
                    let patch = img.slice(s![py * p..(py + 1) * p, px * p..(px + 1) * p, ..]);
                    for (dst, v) in patches.row_mut(row).iter_mut().zip(patch.iter()) {
                        *dst = *v;
                    }
                }
            }
        }
        let tokens = patches.dot(&self.patch_weight) + &self.patch_bias;
        let mut out = Array3::<f64>::zeros((n, t, d));
        for i in 0..n {
            out.slice_mut(s![i, 0, ..]).assign(&self.cls_token);
            out.slice_mut(s![i, 1.., ..])
                .assign(&tokens.slice(s![i * side * side..(i + 1) * side * side, ..]));
        }
        out += &self.pos_embed;
        Ok(out)
    }

    /// Runs the first `upto` blocks and returns every boundary state.
    fn run(&self, batch: &ImageBatch, upto: usize) -> Result<HiddenStates> {
        let mut states = Vec::with_capacity(upto + 1);
        states.push(self.embed(batch)?);
        for block in &self.blocks[..upto] {
            let next = block.forward(states.last().expect("embedding").view());
            states.push(next);
        }
        HiddenStates::new(states)
    }

    pub fn hidden_states(&self, batch: &ImageBatch) -> Result<HiddenStates> {
        self.run(batch, self.blocks.len())
    }

    /// Penultimate-layer class-token embedding from precomputed states.
    pub fn pretrained_from_states(&self, states: &HiddenStates) -> Result<Array2<f64>> {
        ensure_dim(self.blocks.len(), states.num_blocks(), "hidden state blocks")?;
        let last = states.output_of(states.num_blocks() - 1);
        let cls = last.slice(s![.., 0, ..]);
        Ok(self.final_norm.forward(cls))
    }

    /// `n x embed_dim` class-token embeddings after the final norm.
    pub fn extract_pretrained(&self, batch: &ImageBatch) -> Result<FeatureMatrix> {
        let states = self.hidden_states(batch)?;
        let values = self.pretrained_from_states(&states)?;
        ensure_dim(self.spec.embed_dim, values.ncols(), "pretrained feature width")?;
        FeatureMatrix::new(
            values,
            SpaceTag::Pretrained,
            FeatureMeta {
                backbone: self.identifier(),
                split: String::new(),
            },
        )
    }

    /// Applies the configured tap to raw block activations.
    pub fn tap(&self, activations: ArrayView3<f64>) -> Array3<f64> {
        match self.spec.tap {
            TapPoint::Residual => activations.to_owned(),
            TapPoint::Normalized => {
                let (n, t, d) = activations.dim();
                self.final_norm
                    .forward(flatten(activations).view())
                    .into_shape_with_order((n, t, d))
                    .expect("contiguous")
            }
        }
    }

    /// Tapped activations of the requested blocks, in request order.
    pub fn block_outputs(&self, batch: &ImageBatch, indices: &[usize]) -> Result<Vec<BlockOutput>> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.spec.num_blocks) {
            return Err(Error::invalid(format!(
                "block index {bad} out of range for {} blocks",
                self.spec.num_blocks
            )));
        }
        let Some(&deepest) = indices.iter().max() else {
            return Ok(Vec::new());
        };
        let states = self.run(batch, deepest + 1)?;
        Ok(indices
            .iter()
            .map(|&j| BlockOutput {
                block_index: j,
                activations: self.tap(states.output_of(j)),
            })
            .collect())
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let metadata = serde_json::json!({
            "spec": self.spec,
            "seed": self.seed,
        });
        let mut a = TensorArchive::new("vision_transformer", metadata);
        a.push("patch.weight", self.patch_weight.view().into_dyn());
        a.push("patch.bias", self.patch_bias.view().into_dyn());
        a.push("cls_token", self.cls_token.view().into_dyn());
        a.push("pos_embed", self.pos_embed.view().into_dyn());
        for (j, block) in self.blocks.iter().enumerate() {
            for (name, t) in TENSOR_NAMES.iter().zip(block.tensors()) {
                a.push(format!("blocks.{j}.{name}"), t);
            }
        }
        a.push("norm.gamma", self.final_norm.gamma.view().into_dyn());
        a.push("norm.beta", self.final_norm.beta.view().into_dyn());
        Ok(a)
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        self.to_archive()?.save(stem)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let a = TensorArchive::load(stem)?;
        if a.kind != "vision_transformer" {
            return Err(Error::invalid(format!("expected vision_transformer archive, found `{}`", a.kind)));
        }
        let spec: BackboneSpec = serde_json::from_value(a.metadata["spec"].clone())?;
        spec.validate()?;
        let seed = a.metadata["seed"].as_u64();
        let mut blocks = Vec::with_capacity(spec.num_blocks);
        for j in 0..spec.num_blocks {
            blocks.push(block_from_archive(&a, &format!("blocks.{j}."), spec.num_heads)?);
        }
        let vit = Self {
            patch_weight: to_array2(a.get("patch.weight")?, "patch.weight")?,
            patch_bias: to_array1(a.get("patch.bias")?, "patch.bias")?,
            cls_token: to_array1(a.get("cls_token")?, "cls_token")?,
            pos_embed: to_array2(a.get("pos_embed")?, "pos_embed")?,
            blocks,
            final_norm: LayerNorm {
                gamma: to_array1(a.get("norm.gamma")?, "norm.gamma")?,
                beta: to_array1(a.get("norm.beta")?, "norm.beta")?,
            },
            spec,
            seed,
        };
        ensure_dim(vit.spec.patch_dim(), vit.patch_weight.nrows(), "patch weight rows")?;
        ensure_dim(vit.spec.embed_dim, vit.patch_weight.ncols(), "patch weight cols")?;
        ensure_dim(vit.spec.num_tokens(), vit.pos_embed.nrows(), "position embedding rows")?;
        Ok(vit)
    }
}

pub(crate) fn block_from_archive(a: &TensorArchive, prefix: &str, num_heads: usize) -> Result<TransformerBlock> {
    let get1 = |n: &str| {
        let name = format!("{prefix}{n}");
        to_array1(a.get(&name)?, &name)
    };
    let get2 = |n: &str| {
        let name = format!("{prefix}{n}");
        to_array2(a.get(&name)?, &name)
    };
    let block = TransformerBlock {
        num_heads,
        norm1: LayerNorm {
            gamma: get1("norm1.gamma")?,
            beta: get1("norm1.beta")?,
        },
        qkv_weight: get2("qkv.weight")?,
        qkv_bias: get1("qkv.bias")?,
        proj_weight: get2("proj.weight")?,
        proj_bias: get1("proj.bias")?,
        norm2: LayerNorm {
            gamma: get1("norm2.gamma")?,
            beta: get1("norm2.beta")?,
        },
        fc1_weight: get2("fc1.weight")?,
        fc1_bias: get1("fc1.bias")?,
        fc2_weight: get2("fc2.weight")?,
        fc2_bias: get1("fc2.bias")?,
    };
    let reference = TransformerBlock::zeros(block.dim(), num_heads, block.mlp_dim());
    if !block.same_architecture(&reference) || block.dim() % num_heads != 0 {
        return Err(Error::invalid(format!("inconsistent tensor shapes under `{prefix}`")));
    }
    Ok(block)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::preprocess;
    use ndarray::Array4;

    fn batch(n: usize, res: usize, seed: u64) -> ImageBatch {
        let mut r = rng(seed);
        let px = Array4::from_shape_simple_fn((n, res, res, 3), || r.random::<f64>());
        ImageBatch::with_sequential_ids(px, None, "s").unwrap()
    }

    #[test]
    fn pretrained_shape_and_determinism() {
        let vit = VisionTransformer::mock(BackboneSpec::mock(), 1).unwrap();
        let b = preprocess(&batch(5, 32, 2), vit.spec()).unwrap();
        let a = vit.extract_pretrained(&b).unwrap();
        assert_eq!((a.nrows(), a.ncols()), (5, 16));
        let again = vit.extract_pretrained(&b).unwrap();
        assert!(a.values().iter().zip(again.values().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn rejects_wrong_resolution() {
        let vit = VisionTransformer::mock(BackboneSpec::mock(), 1).unwrap();
        let b = batch(1, 16, 2);
        assert!(matches!(vit.extract_pretrained(&b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn block_outputs_order_and_range() {
        let vit = VisionTransformer::mock(BackboneSpec::mock(), 1).unwrap();
        let b = preprocess(&batch(2, 32, 3), vit.spec()).unwrap();
        let outs = vit.block_outputs(&b, &(2..12).collect::<Vec<_>>()).unwrap();
        assert_eq!(outs.len(), 10);
        assert!(outs.iter().all(|o| o.activations.dim() == (2, 17, 16)));
        let picked = vit.block_outputs(&b, &[5, 1]).unwrap();
        assert_eq!(picked[0].block_index, 5);
        assert_eq!(picked[0].activations, outs[3].activations);
        assert!(vit.block_outputs(&b, &[]).unwrap().is_empty());
        assert!(vit.block_outputs(&b, &[12]).is_err());
    }

    #[test]
    fn normalized_tap_standardizes_tokens() {
        let mut spec = BackboneSpec::mock();
        spec.tap = TapPoint::Normalized;
        let vit = VisionTransformer::mock(spec, 1).unwrap();
        let b = preprocess(&batch(1, 32, 3), vit.spec()).unwrap();
        let out = &vit.block_outputs(&b, &[0]).unwrap()[0].activations;
        for tok in out.slice(s![0, .., ..]).rows() {
            assert!(tok.mean().unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vit = VisionTransformer::mock(BackboneSpec::mock(), 9).unwrap();
        vit.save(&dir.path().join("w")).unwrap();
        let back = VisionTransformer::load(&dir.path().join("w")).unwrap();
        assert_eq!(vit, back);
    }
}
