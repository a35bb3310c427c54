use ndarray::{Array4, ArrayView3};

use super::types::{BackboneSpec, ImageBatch};
use crate::error::{Error, Result};

/// Resizes raw `[0, 1]` pixels to the backbone resolution, replicates
/// grayscale to three channels and normalizes with the pretraining statistics.
///
/// The input must be raw decoded pixels; preprocessing an already
/// preprocessed batch is not idempotent.
pub fn preprocess(batch: &ImageBatch, spec: &BackboneSpec) -> Result<ImageBatch> {
    spec.validate()?;
    let (h, w, c) = batch.image_shape();
    if h == 0 || w == 0 {
        return Err(Error::invalid(format!("zero-area image ({h}x{w})")));
    }
    if c != 1 && c != 3 {
        return Err(Error::invalid(format!("unsupported channel count {c}")));
    }
    if let Some(bad) = batch
        .pixels()
        .iter()
        .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
    {
        return Err(Error::invalid(format!(
            "pixel value {bad} outside [0, 1]; expected decoded raw pixels"
        )));
    }

    let res = spec.input_resolution;
    let rows = axis_plan(h, res);
    let cols = axis_plan(w, res);
    let stats = &spec.normalization;
    let mut out = Array4::<f64>::zeros((batch.len(), res, res, 3));
    for (img, mut dst) in batch.pixels().outer_iter().zip(out.outer_iter_mut()) {
        for (y, &(y0, y1, ty)) in rows.iter().enumerate() {
            for (x, &(x0, x1, tx)) in cols.iter().enumerate() {
                for ch in 0..3 {
                    let src_ch = if c == 1 { 0 } else { ch };
                    let v = bilinear(&img, src_ch, (y0, y1, ty), (x0, x1, tx));
                    dst[[y, x, ch]] = (v - stats.mean[ch]) / stats.std[ch];
                }
            }
        }
    }
    batch.replace_pixels(out)
}

/// Source taps `(i0, i1, t)` for every output coordinate, half-pixel centers.
fn axis_plan(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    if input == output {
        return (0..output).map(|i| (i, i, 0.0)).collect();
    }
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

// a + (b - a) * t keeps constant regions exactly constant.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn bilinear(
    img: &ArrayView3<f64>,
    ch: usize,
    (y0, y1, ty): (usize, usize, f64),
    (x0, x1, tx): (usize, usize, f64),
) -> f64 {
    let top = lerp(img[[y0, x0, ch]], img[[y0, x1, ch]], tx);
    let bottom = lerp(img[[y1, x0, ch]], img[[y1, x1, ch]], tx);
    lerp(top, bottom, ty)
}
