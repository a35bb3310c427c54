//! Pre-norm transformer encoder block with an explicit backward pass.
//!
//! `out = x2 + Mlp(LN2(x2))`, `x2 = x + Attn(LN1(x))`. Activations are
//! `n x T x D`; linear layers run on the flattened `(n*T) x D` view.

use ndarray::{
    s, Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayViewD, ArrayViewMutD, Axis, Zip,
};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const LAYER_NORM_EPS: f64 = 1e-6;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

pub(crate) fn randn<R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize), std: f64) -> Array2<f64> {
    let normal = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn(shape, || normal.sample(rng))
}

pub(crate) fn randn1<R: Rng + ?Sized>(rng: &mut R, len: usize, std: f64) -> Array1<f64> {
    let normal = Normal::new(0.0, std).expect("finite std");
    Array1::from_shape_simple_fn(len, || normal.sample(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            gamma: Array1::zeros(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub(crate) fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, NormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row -= mean;
            let var = row.dot(&row) / d;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row *= is;
            *s = is;
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, NormCache { xhat, inv_std })
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub(crate) fn backward(
        &self,
        cache: &NormCache,
        dy: &Array2<f64>,
    ) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
        let dbeta = dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let d = dy.ncols() as f64;
        let mut dx = Array2::zeros(dy.raw_dim());
        for (((mut out, g), xh), &is) in dx
            .rows_mut()
            .into_iter()
            .zip(dxhat.rows())
            .zip(cache.xhat.rows())
            .zip(cache.inv_std.iter())
        {
            let mean_g = g.sum() / d;
            let mean_gx = g.dot(&xh) / d;
            Zip::from(&mut out)
                .and(&g)
                .and(&xh)
                .for_each(|o, &gi, &xi| *o = (gi - mean_g - xi * mean_gx) * is);
        }
        (dx, dgamma, dbeta)
    }
}

/// Parameters of one encoder block. The same type holds gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock {
    pub num_heads: usize,
    pub norm1: LayerNorm,
    /// `D x 3D`, columns ordered `[q | k | v]`, heads contiguous within each.
    pub qkv_weight: Array2<f64>,
    pub qkv_bias: Array1<f64>,
    pub proj_weight: Array2<f64>,
    pub proj_bias: Array1<f64>,
    pub norm2: LayerNorm,
    pub fc1_weight: Array2<f64>,
    pub fc1_bias: Array1<f64>,
    pub fc2_weight: Array2<f64>,
    pub fc2_bias: Array1<f64>,
}

pub(crate) struct BlockCache {
    n: usize,
    t: usize,
    norm1: NormCache,
    y1: Array2<f64>,
    qkv: Array2<f64>,
    probs: Array4<f64>,
    attn: Array2<f64>,
    norm2: NormCache,
    y2: Array2<f64>,
    hidden: Array2<f64>,
    act: Array2<f64>,
}

/// Names of the parameter tensors, in the fixed order used by
/// [`TransformerBlock::tensors`] and the on-disk format.
pub const TENSOR_NAMES: [&str; 12] = [
    "norm1.gamma",
    "norm1.beta",
    "qkv.weight",
    "qkv.bias",
    "proj.weight",
    "proj.bias",
    "norm2.gamma",
    "norm2.beta",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
];

impl TransformerBlock {
    pub fn zeros(dim: usize, num_heads: usize, mlp_dim: usize) -> Self {
        Self {
            num_heads,
            norm1: LayerNorm::zeros(dim),
            qkv_weight: Array2::zeros((dim, 3 * dim)),
            qkv_bias: Array1::zeros(3 * dim),
            proj_weight: Array2::zeros((dim, dim)),
            proj_bias: Array1::zeros(dim),
            norm2: LayerNorm::zeros(dim),
            fc1_weight: Array2::zeros((dim, mlp_dim)),
            fc1_bias: Array1::zeros(mlp_dim),
            fc2_weight: Array2::zeros((mlp_dim, dim)),
            fc2_bias: Array1::zeros(dim),
        }
    }

    /// Random weights with `weight_std` scaled by `1/sqrt(fan_in)` when
    /// `fan_in_scaled`, otherwise used as-is; unit norms, small biases.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        dim: usize,
        num_heads: usize,
        mlp_dim: usize,
        weight_std: f64,
        bias_std: f64,
        fan_in_scaled: bool,
    ) -> Self {
        let scale = |fan_in: usize| {
            if fan_in_scaled {
                weight_std / (fan_in as f64).sqrt()
            } else {
                weight_std
            }
        };
        let bias = |rng: &mut R, len: usize| {
            if bias_std > 0.0 {
                randn1(rng, len, bias_std)
            } else {
                Array1::zeros(len)
            }
        };
        Self {
            num_heads,
            norm1: LayerNorm::identity(dim),
            qkv_weight: randn(rng, (dim, 3 * dim), scale(dim)),
            qkv_bias: bias(rng, 3 * dim),
            proj_weight: randn(rng, (dim, dim), scale(dim)),
            proj_bias: bias(rng, dim),
            norm2: LayerNorm::identity(dim),
            fc1_weight: randn(rng, (dim, mlp_dim), scale(dim)),
            fc1_bias: bias(rng, mlp_dim),
            fc2_weight: randn(rng, (mlp_dim, dim), scale(mlp_dim)),
            fc2_bias: bias(rng, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.proj_weight.nrows()
    }

    pub fn mlp_dim(&self) -> usize {
        self.fc1_weight.ncols()
    }

    /// True when `other` has identical tensor shapes and head count.
    pub fn same_architecture(&self, other: &Self) -> bool {
        self.num_heads == other.num_heads
            && self
                .tensors()
                .iter()
                .zip(other.tensors().iter())
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub fn tensors(&self) -> Vec<ArrayViewD<'_, f64>> {
        vec![
            self.norm1.gamma.view().into_dyn(),
            self.norm1.beta.view().into_dyn(),
            self.qkv_weight.view().into_dyn(),
            self.qkv_bias.view().into_dyn(),
            self.proj_weight.view().into_dyn(),
            self.proj_bias.view().into_dyn(),
            self.norm2.gamma.view().into_dyn(),
            self.norm2.beta.view().into_dyn(),
            self.fc1_weight.view().into_dyn(),
            self.fc1_bias.view().into_dyn(),
            self.fc2_weight.view().into_dyn(),
            self.fc2_bias.view().into_dyn(),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        vec![
            self.norm1.gamma.view_mut().into_dyn(),
            self.norm1.beta.view_mut().into_dyn(),
            self.qkv_weight.view_mut().into_dyn(),
            self.qkv_bias.view_mut().into_dyn(),
            self.proj_weight.view_mut().into_dyn(),
            self.proj_bias.view_mut().into_dyn(),
            self.norm2.gamma.view_mut().into_dyn(),
            self.norm2.beta.view_mut().into_dyn(),
            self.fc1_weight.view_mut().into_dyn(),
            self.fc1_bias.view_mut().into_dyn(),
            self.fc2_weight.view_mut().into_dyn(),
            self.fc2_bias.view_mut().into_dyn(),
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn forward(&self, x: ArrayView3<f64>) -> Array3<f64> {
        self.forward_cached(x).0
    }

    pub(crate) fn forward_cached(&self, x: ArrayView3<f64>) -> (Array3<f64>, BlockCache) {
        let (n, t, d) = x.dim();
        let x2d = flatten(x);

        let (y1, norm1) = self.norm1.forward_cached(x2d.view());
        let qkv = y1.dot(&self.qkv_weight) + &self.qkv_bias;
        let (attn, probs) = self.attention(&qkv, n, t);
        let mut x2 = attn.dot(&self.proj_weight) + &self.proj_bias;
        x2 += &x2d;

        let (y2, norm2) = self.norm2.forward_cached(x2.view());
        let hidden = y2.dot(&self.fc1_weight) + &self.fc1_bias;
        let act = hidden.mapv(gelu);
        let mut out = act.dot(&self.fc2_weight) + &self.fc2_bias;
        out += &x2;

        let out = out
            .into_shape_with_order((n, t, d))
            .expect("contiguous block output");
        let cache = BlockCache {
            n,
            t,
            norm1,
            y1,
            qkv,
            probs,
            attn,
            norm2,
            y2,
            hidden,
            act,
        };
        (out, cache)
    }

    fn attention(&self, qkv: &Array2<f64>, n: usize, t: usize) -> (Array2<f64>, Array4<f64>) {
        let d = self.dim();
        let heads = self.num_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros((n * t, d));
        let mut probs = Array4::zeros((n, heads, t, t));
        for sample in 0..n {
            let rows = sample * t..(sample + 1) * t;
            for head in 0..heads {
                let (q, k, v) = head_views(qkv, rows.clone(), head, dh, d);
                let mut scores = q.dot(&k.t()) * scale;
                softmax_rows(&mut scores);
                out.slice_mut(s![rows.clone(), head * dh..(head + 1) * dh])
                    .assign(&scores.dot(&v));
                probs.slice_mut(s![sample, head, .., ..]).assign(&scores);
            }
        }
        (out, probs)
    }

    /// Gradients of all parameters and of the block input, given the
    /// gradient of the block output.
    pub(crate) fn backward(&self, cache: &BlockCache, d_out: &Array3<f64>) -> (TransformerBlock, Array3<f64>) {
        let (n, t) = (cache.n, cache.t);
        let d = self.dim();
        let d_out = flatten(d_out.view());
        let mut grads = TransformerBlock::zeros(d, self.num_heads, self.mlp_dim());
        grads.num_heads = self.num_heads;

        // MLP branch
        grads.fc2_weight = cache.act.t().dot(&d_out);
        grads.fc2_bias = d_out.sum_axis(Axis(0));
        let d_act = d_out.dot(&self.fc2_weight.t());
        let mut d_hidden = d_act;
        Zip::from(&mut d_hidden)
            .and(&cache.hidden)
            .for_each(|g, &h| *g *= gelu_grad(h));
        grads.fc1_weight = cache.y2.t().dot(&d_hidden);
        grads.fc1_bias = d_hidden.sum_axis(Axis(0));
        let d_y2 = d_hidden.dot(&self.fc1_weight.t());
        let (d_x2_norm, g2, b2) = self.norm2.backward(&cache.norm2, &d_y2);
        grads.norm2 = LayerNorm { gamma: g2, beta: b2 };
        let d_x2 = d_out + &d_x2_norm;

        // attention branch
        grads.proj_weight = cache.attn.t().dot(&d_x2);
        grads.proj_bias = d_x2.sum_axis(Axis(0));
        let d_attn = d_x2.dot(&self.proj_weight.t());
        let d_qkv = self.attention_backward(cache, &d_attn, n, t);
        grads.qkv_weight = cache.y1.t().dot(&d_qkv);
        grads.qkv_bias = d_qkv.sum_axis(Axis(0));
        let d_y1 = d_qkv.dot(&self.qkv_weight.t());
        let (d_x_norm, g1, b1) = self.norm1.backward(&cache.norm1, &d_y1);
        grads.norm1 = LayerNorm { gamma: g1, beta: b1 };

        let d_x = (d_x2 + &d_x_norm)
            .into_shape_with_order((n, t, d))
            .expect("contiguous input gradient");
        (grads, d_x)
    }

    fn attention_backward(&self, cache: &BlockCache, d_attn: &Array2<f64>, n: usize, t: usize) -> Array2<f64> {
        let d = self.dim();
        let heads = self.num_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut d_qkv = Array2::zeros((n * t, 3 * d));
        for sample in 0..n {
            let rows = sample * t..(sample + 1) * t;
            for head in 0..heads {
                let (q, k, v) = head_views(&cache.qkv, rows.clone(), head, dh, d);
                let p = cache.probs.slice(s![sample, head, .., ..]);
                let d_o = d_attn.slice(s![rows.clone(), head * dh..(head + 1) * dh]);
                let d_p = d_o.dot(&v.t());
                let d_v = p.t().dot(&d_o);
                let row_dot = (&d_p * &p).sum_axis(Axis(1)).insert_axis(Axis(1));
                let d_s = &p * &(d_p - &row_dot);
                let d_q = d_s.dot(&k) * scale;
                let d_k = d_s.t().dot(&q) * scale;
                d_qkv
                    .slice_mut(s![rows.clone(), head * dh..(head + 1) * dh])
                    .assign(&d_q);
                d_qkv
                    .slice_mut(s![rows.clone(), d + head * dh..d + (head + 1) * dh])
                    .assign(&d_k);
                d_qkv
                    .slice_mut(s![rows.clone(), 2 * d + head * dh..2 * d + (head + 1) * dh])
                    .assign(&d_v);
            }
        }
        d_qkv
    }
}

fn head_views(
    qkv: &Array2<f64>,
    rows: std::ops::Range<usize>,
    head: usize,
    dh: usize,
    d: usize,
) -> (ArrayView2<'_, f64>, ArrayView2<'_, f64>, ArrayView2<'_, f64>) {
    let c = head * dh;
    (
        qkv.slice(s![rows.clone(), c..c + dh]),
        qkv.slice(s![rows.clone(), d + c..d + c + dh]),
        qkv.slice(s![rows, 2 * d + c..2 * d + c + dh]),
    )
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

pub(crate) fn flatten(x: ArrayView3<f64>) -> Array2<f64> {
    let (n, t, d) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n * t, d))
        .expect("standard layout")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng;

    fn small_block(seed: u64) -> TransformerBlock {
        let mut r = rng(seed);
        let mut b = TransformerBlock::random(&mut r, 4, 2, 6, 1.0, 0.1, true);
        // non-trivial norm parameters so their gradients are exercised
        b.norm1.gamma = randn1(&mut r, 4, 0.3) + 1.0;
        b.norm1.beta = randn1(&mut r, 4, 0.1);
        b.norm2.gamma = randn1(&mut r, 4, 0.3) + 1.0;
        b.norm2.beta = randn1(&mut r, 4, 0.1);
        b
    }

    fn weighted_loss(block: &TransformerBlock, x: &Array3<f64>, w: &Array3<f64>) -> f64 {
        (block.forward(x.view()) * w).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let block = small_block(11);
        let mut r = rng(12);
        let x = Array3::from_shape_vec((2, 3, 4), randn(&mut r, (6, 4), 1.0).into_raw_vec_and_offset().0).unwrap();
        let w = Array3::from_shape_vec((2, 3, 4), randn(&mut r, (6, 4), 1.0).into_raw_vec_and_offset().0).unwrap();

        let (_, cache) = block.forward_cached(x.view());
        let (grads, d_x) = block.backward(&cache, &w);

        let eps = 1e-6;
        let grad_tensors: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.iter().copied().collect()).collect();
        for (ti, analytic) in grad_tensors.iter().enumerate() {
            for ei in 0..analytic.len() {
                let mut plus = block.clone();
                let mut minus = block.clone();
                *plus.tensors_mut()[ti].iter_mut().nth(ei).unwrap() += eps;
                *minus.tensors_mut()[ti].iter_mut().nth(ei).unwrap() -= eps;
                let numeric = (weighted_loss(&plus, &x, &w) - weighted_loss(&minus, &x, &w)) / (2.0 * eps);
                let a = analytic[ei];
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                    "{} [{ei}]: analytic {a} numeric {numeric}",
                    TENSOR_NAMES[ti]
                );
            }
        }
        for idx in ndarray::indices(x.raw_dim()) {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[idx] += eps;
            xm[idx] -= eps;
            let numeric = (weighted_loss(&block, &xp, &w) - weighted_loss(&block, &xm, &w)) / (2.0 * eps);
            assert!((d_x[idx] - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()));
        }
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let mut r = rng(3);
        let x = randn(&mut r, (5, 8), 3.0) + 2.0;
        let y = LayerNorm::identity(8).forward(x.view());
        for row in y.rows() {
            assert!(row.mean().unwrap().abs() < 1e-12);
            let var = row.mapv(|v| v * v).mean().unwrap();
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let block = small_block(5);
        let mut r = rng(6);
        let x = Array3::from_shape_vec((1, 5, 4), randn(&mut r, (5, 4), 1.0).into_raw_vec_and_offset().0).unwrap();
        let (_, cache) = block.forward_cached(x.view());
        for row in cache.probs.slice(s![0, 0, .., ..]).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|p| *p > 0.0));
        }
    }

    #[test]
    fn tensor_list_matches_names() {
        let b = TransformerBlock::zeros(4, 2, 6);
        assert_eq!(b.tensors().len(), TENSOR_NAMES.len());
        assert_eq!(b.num_parameters(), 4 * 2 + 4 * 12 + 12 + 16 + 4 + 4 * 2 + 24 + 6 + 24 + 4);
    }
}
