use ndarray::{Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel statistics used to normalize pixels before the backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormalizationStats {
    /// Statistics used by the common ImageNet-21k ViT checkpoints.
    pub fn half() -> Self {
        Self {
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }

    pub fn imagenet() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

/// Where a block's activations are observed for teacher/student comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapPoint {
    /// Output of the block after both residual additions.
    #[default]
    Residual,
    /// The residual output passed through the backbone's final layer norm.
    Normalized,
}

/// Architecture description of a vision-transformer backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    /// Model name plus pretraining corpus tag, e.g. `vit-b16/in21k-in1k`.
    pub identifier: String,
    pub num_blocks: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub mlp_dim: usize,
    pub patch_size: usize,
    pub input_resolution: usize,
    pub normalization: NormalizationStats,
    #[serde(default)]
    pub tap: TapPoint,
}

impl BackboneSpec {
    /// ViT-B/16 at 224px: 12 blocks, 12 heads, 768-d tokens.
    pub fn vit_base_16() -> Self {
        Self {
            identifier: "vit-b16/in21k-in1k".into(),
            num_blocks: 12,
            embed_dim: 768,
            num_heads: 12,
            mlp_dim: 3072,
            patch_size: 16,
            input_resolution: 224,
            normalization: NormalizationStats::half(),
            tap: TapPoint::Residual,
        }
    }

    /// The small CPU-only transformer used by tests and synthetic runs.
    pub fn mock() -> Self {
        Self {
            identifier: "mock-vit".into(),
            num_blocks: 12,
            embed_dim: 16,
            num_heads: 2,
            mlp_dim: 32,
            patch_size: 8,
            input_resolution: 32,
            normalization: NormalizationStats::half(),
            tap: TapPoint::Residual,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 {
            return Err(Error::config("num_blocks must be at least 1"));
        }
        if self.embed_dim == 0 || self.num_heads == 0 || self.mlp_dim == 0 {
            return Err(Error::config("embed_dim, num_heads and mlp_dim must be positive"));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::config(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.patch_size == 0 || self.input_resolution == 0 {
            return Err(Error::config("patch_size and input_resolution must be positive"));
        }
        if self.input_resolution % self.patch_size != 0 {
            return Err(Error::config(format!(
                "input_resolution {} is not divisible by patch_size {}",
                self.input_resolution, self.patch_size
            )));
        }
        if self.normalization.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config("normalization std must be positive"));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        let side = self.input_resolution / self.patch_size;
        side * side
    }

    /// Tokens per sample: one class token plus the patch tokens.
    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    /// Default teacher-student block selection: the last `min(10, num_blocks - 2)`
    /// blocks, at least one.
    pub fn default_block_indices(&self) -> Vec<usize> {
        let m = self.num_blocks.saturating_sub(2).clamp(1, 10).min(self.num_blocks);
        last_blocks(self.num_blocks, m)
    }

    /// The last `m` blocks, or an error if the backbone has fewer.
    pub fn last_blocks(&self, m: usize) -> Result<Vec<usize>> {
        if m == 0 || m > self.num_blocks {
            return Err(Error::config(format!(
                "cannot select the last {m} blocks of a {}-block backbone",
                self.num_blocks
            )));
        }
        Ok(last_blocks(self.num_blocks, m))
    }
}

fn last_blocks(num_blocks: usize, m: usize) -> Vec<usize> {
    (num_blocks - m..num_blocks).collect()
}

/// A batch of images, `n x H x W x C`.
///
/// Raw batches hold decoded pixels in `[0, 1]`. After [`preprocess`](super::preprocess)
/// the values are normalized and no longer bounded.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pixels: Array4<f64>,
    labels: Option<Vec<usize>>,
    ids: Vec<String>,
}

impl ImageBatch {
    pub fn new(pixels: Array4<f64>, labels: Option<Vec<usize>>, ids: Vec<String>) -> Result<Self> {
        let (n, _, _, c) = pixels.dim();
        if n == 0 {
            return Err(Error::invalid("image batch is empty"));
        }
        if c != 1 && c != 3 {
            return Err(Error::invalid(format!("unsupported channel count {c}")));
        }
        if ids.len() != n {
            return Err(Error::invalid(format!("{} ids for {n} images", ids.len())));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::invalid(format!("{} labels for {n} images", labels.len())));
            }
        }
        Ok(Self { pixels, labels, ids })
    }

    /// Builds a batch with sequential ids `"{prefix}{i}"`.
    pub fn with_sequential_ids(
        pixels: Array4<f64>,
        labels: Option<Vec<usize>>,
        prefix: &str,
    ) -> Result<Self> {
        let ids = (0..pixels.len_of(Axis(0)))
            .map(|i| format!("{prefix}{i}"))
            .collect();
        Self::new(pixels, labels, ids)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn pixels(&self) -> &Array4<f64> {
        &self.pixels
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// `(height, width, channels)` of every image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let (_, h, w, c) = self.pixels.dim();
        (h, w, c)
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let pixels = self.pixels.select(Axis(0), indices);
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        let ids = indices.iter().map(|&i| self.ids[i].clone()).collect();
        Self::new(pixels, labels, ids)
    }

    pub(crate) fn replace_pixels(&self, pixels: Array4<f64>) -> Result<Self> {
        Self::new(pixels, self.labels.clone(), self.ids.clone())
    }
}

/// Activations of one transformer block for a batch, `n x T x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOutput {
    pub block_index: usize,
    pub activations: Array3<f64>,
}
