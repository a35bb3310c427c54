//! Dataset handle and in-repo synthetic generators.

use ndarray::{Array1, Array2, Array4, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::backbone::ImageBatch;
use crate::error::{Error, Result};
use crate::io::sha256_hex;
use crate::seed::{derive_seed, rng};

/// A labeled dataset with fixed train and test partitions.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub train: ImageBatch,
    pub test: ImageBatch,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        class_names: Vec<String>,
        train: ImageBatch,
        test: ImageBatch,
    ) -> Result<Self> {
        let num_classes = class_names.len();
        if num_classes < 2 {
            return Err(Error::invalid("a dataset needs at least two classes"));
        }
        for (part, batch) in [("train", &train), ("test", &test)] {
            let labels = batch
                .labels()
                .ok_or_else(|| Error::invalid(format!("{part} split has no labels")))?;
            if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
                return Err(Error::invalid(format!("{part} label {bad} outside 0..{num_classes}")));
            }
        }
        if train.image_shape() != test.image_shape() {
            return Err(Error::invalid("train and test images differ in shape"));
        }
        Ok(Self {
            name: name.into(),
            num_classes,
            class_names,
            train,
            test,
        })
    }

    pub fn train_labels(&self) -> &[usize] {
        self.train.labels().expect("validated")
    }

    pub fn test_labels(&self) -> &[usize] {
        self.test.labels().expect("validated")
    }

    /// Training sample count per class.
    pub fn train_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        self.train_labels().iter().for_each(|&l| c[l] += 1);
        c
    }
}

/// Prefix for sample ids, unique per generator configuration so that cache
/// keys built from ids never collide across configurations.
fn id_tag(name: &str, cfg: &impl Serialize) -> String {
    let json = serde_json::to_string(cfg).expect("plain config");
    format!("{name}-{}", &sha256_hex(json.as_bytes())[..12])
}

fn numbered_classes(k: usize) -> Vec<String> {
    (0..k).map(|c| format!("class{c}")).collect()
}

fn gaussian_vec(r: &mut impl Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || StandardNormal.sample(r))
}

/// Image blobs for the mock backbone: each class has a smooth color template,
/// samples add a low-frequency perturbation and pixel noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobImageConfig {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub resolution: usize,
    /// Scales the class-specific part of each template; 0 makes classes identical.
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for BlobImageConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            train_per_class: 100,
            test_per_class: 50,
            resolution: 32,
            separation: 1.0,
            noise: 0.05,
            seed: 0,
        }
    }
}

const GRID: usize = 4;
/// Per-entry RMS of a class offset at separation 1.
const OFFSET_RMS: f64 = 0.1;
/// Global color shift between classes at separation 1.
const COLOR_SHIFT: f64 = 0.1;

/// Unit color direction of class `c`: tetrahedron vertices for the first
/// four classes, random directions after that.
fn class_tint(c: usize, r: &mut impl Rng) -> Array1<f64> {
    const TETRA: [[f64; 3]; 4] = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
    let v = match TETRA.get(c) {
        Some(t) => Array1::from(t.to_vec()),
        None => gaussian_vec(r, 3),
    };
    let n = v.dot(&v).sqrt();
    v / n
}

/// Bilinear upsampling of a `GRID x GRID x 3` control grid to `res x res x 3`.
fn upsample(grid: &Array2<f64>, res: usize) -> Array2<f64> {
    let mut out = Array2::zeros((res * res, 3));
    let scale = (GRID - 1) as f64 / (res - 1).max(1) as f64;
    for y in 0..res {
        for x in 0..res {
            let gy = y as f64 * scale;
            let gx = x as f64 * scale;
            let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(GRID - 1), (x0 + 1).min(GRID - 1));
            let (ty, tx) = (gy - y0 as f64, gx - x0 as f64);
            for c in 0..3 {
                let g = |yy: usize, xx: usize| grid[[yy * GRID + xx, c]];
                let top = g(y0, x0) + (g(y0, x1) - g(y0, x0)) * tx;
                let bot = g(y1, x0) + (g(y1, x1) - g(y1, x0)) * tx;
                out[[y * res + x, c]] = top + (bot - top) * ty;
            }
        }
    }
    out
}

fn random_grid(r: &mut impl Rng, amplitude: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((GRID * GRID, 3), || amplitude * (2.0 * r.random::<f64>() - 1.0))
}

pub fn blob_images(cfg: &BlobImageConfig) -> Result<Dataset> {
    if cfg.num_classes < 2 || cfg.train_per_class < 2 || cfg.test_per_class < 1 || cfg.resolution < 2 {
        return Err(Error::config("blob images need >= 2 classes, >= 2 train and >= 1 test sample per class"));
    }
    let res = cfg.resolution;
    let mut tr = rng(derive_seed(cfg.seed, "blob-templates", 0));
    let base = random_grid(&mut tr, 0.15);
    // Mutually orthogonal class offsets of equal norm, so every pair of
    // classes is equally far apart on the control grid.
    let dims = GRID * GRID * 3;
    if cfg.num_classes > dims {
        return Err(Error::config(format!("blob images support at most {dims} classes")));
    }
    let raw = Array2::from_shape_simple_fn((dims, cfg.num_classes), || StandardNormal.sample(&mut tr));
    let offsets = orthonormal_columns(raw).expect("Gaussian columns are independent");
    let norm = OFFSET_RMS * (dims as f64).sqrt() * cfg.separation;
    let templates: Vec<Array2<f64>> = offsets
        .columns()
        .into_iter()
        .enumerate()
        .map(|(c, o)| {
            let mut grid = o.to_owned().into_shape_with_order((GRID * GRID, 3)).expect("grid shape") * norm;
            let tint = class_tint(c, &mut tr) * (COLOR_SHIFT * cfg.separation);
            grid += &tint;
            upsample(&(&base + &grid), res)
        })
        .collect();

    let tag = id_tag("blobs", cfg);
    let make = |part: &str, per_class: usize| -> Result<ImageBatch> {
        let n = per_class * cfg.num_classes;
        let mut px = Array4::zeros((n, res, res, 3));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % cfg.num_classes;
            labels.push(c);
            let mut r = rng(derive_seed(cfg.seed, part, i as u64));
            let wobble = upsample(&random_grid(&mut r, 2.0 * cfg.noise), res);
            let mut img = px.index_axis_mut(Axis(0), i);
            for y in 0..res {
                for x in 0..res {
                    for ch in 0..3 {
                        let pixel_noise: f64 = StandardNormal.sample(&mut r);
                        let v = 0.5 + templates[c][[y * res + x, ch]] + wobble[[y * res + x, ch]] + cfg.noise * pixel_noise;
                        img[[y, x, ch]] = v.clamp(0.0, 1.0);
                    }
                }
            }
        }
        ImageBatch::with_sequential_ids(px, Some(labels), &format!("{tag}/{part}-"))
    };
    Dataset::new(
        "blobs",
        numbered_classes(cfg.num_classes),
        make("train", cfg.train_per_class)?,
        make("test", cfg.test_per_class)?,
    )
}

/// Isotropic Gaussian classes in `dim` dimensions, stored as `n x 1 x dim x 1`
/// batches for the identity backbone. Centers sit on a regular polygon in a
/// random plane, so every center lies outside the hull of the others and the
/// remaining centers keep variance in both in-plane directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobVectorConfig {
    pub num_classes: usize,
    /// At least 2.
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Distance between neighboring class centers, in units of the noise std.
    pub separation: f64,
    pub seed: u64,
}

impl Default for BlobVectorConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            dim: 4,
            train_per_class: 100,
            test_per_class: 50,
            separation: 8.0,
            seed: 0,
        }
    }
}

/// Class centers for [`blob_vectors`]: a regular `num_classes`-gon with edge
/// length `separation`, rotated into a random plane.
pub fn blob_centers(cfg: &BlobVectorConfig) -> Array2<f64> {
    let k = cfg.num_classes;
    assert!(k >= 2 && cfg.dim >= 2, "blob centers need two classes and two dimensions");
    let radius = cfg.separation / (2.0 * (std::f64::consts::PI / k as f64).sin());
    let mut flat = Array2::zeros((k, cfg.dim));
    for c in 0..k {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
        flat[[c, 0]] = radius * angle.cos();
        flat[[c, 1]] = radius * angle.sin();
    }
    let mut r = rng(derive_seed(cfg.seed, "blob-centers", 0));
    flat.dot(&random_rotation(&mut r, cfg.dim).t())
}

fn vectors_to_batch(rows: Array2<f64>, labels: Vec<usize>, prefix: &str) -> Result<ImageBatch> {
    let (n, d) = rows.dim();
    let px = rows
        .into_shape_with_order((n, 1, d, 1))
        .map_err(|e| Error::invalid(e.to_string()))?;
    ImageBatch::with_sequential_ids(px, Some(labels), prefix)
}

pub fn blob_vectors(cfg: &BlobVectorConfig) -> Result<Dataset> {
    if cfg.num_classes < 2 || cfg.dim < 2 || cfg.train_per_class < 2 || cfg.test_per_class < 1 {
        return Err(Error::config(
            "blob vectors need >= 2 classes, dim >= 2, >= 2 train and >= 1 test sample per class",
        ));
    }
    let centers = blob_centers(cfg);
    let tag = id_tag("blobs-vector", cfg);
    let make = |part: &str, per_class: usize| {
        let n = per_class * cfg.num_classes;
        let mut r = rng(derive_seed(cfg.seed, part, 0));
        let mut rows = Array2::zeros((n, cfg.dim));
        let mut labels = Vec::with_capacity(n);
        for (i, mut row) in rows.rows_mut().into_iter().enumerate() {
            let c = i % cfg.num_classes;
            labels.push(c);
            row.assign(&(&centers.row(c) + &gaussian_vec(&mut r, cfg.dim)));
        }
        vectors_to_batch(rows, labels, &format!("{tag}/{part}-"))
    };
    Dataset::new(
        "blobs-vector",
        numbered_classes(cfg.num_classes),
        make("train", cfg.train_per_class)?,
        make("test", cfg.test_per_class)?,
    )
}

/// Classes whose training samples have an exactly prescribed sample
/// covariance spectrum (in a random orientation per class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    pub num_classes: usize,
    /// Eigenvalues of every class's training covariance; its length is the dimension.
    pub spectrum: Vec<f64>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    pub seed: u64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            spectrum: (0..12).map(|i| 0.7_f64.powi(i)).collect(),
            train_per_class: 60,
            test_per_class: 30,
            separation: 10.0,
            seed: 0,
        }
    }
}

/// Columns of a random `d x d` orthogonal matrix.
fn random_rotation(r: &mut impl Rng, d: usize) -> Array2<f64> {
    let g = Array2::from_shape_simple_fn((d, d), || StandardNormal.sample(r));
    orthonormal_columns(g).expect("Gaussian matrix has full rank")
}

/// Modified Gram-Schmidt; `None` when the columns are (nearly) dependent.
fn orthonormal_columns(mut a: Array2<f64>) -> Option<Array2<f64>> {
    for j in 0..a.ncols() {
        for k in 0..j {
            let p = a.column(j).dot(&a.column(k));
            let qk = a.column(k).to_owned();
            a.column_mut(j).scaled_add(-p, &qk);
        }
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        if norm < 1e-10 {
            return None;
        }
        a.column_mut(j).mapv_inplace(|v| v / norm);
    }
    Some(a)
}

pub fn spectral(cfg: &SpectralConfig) -> Result<Dataset> {
    let d = cfg.spectrum.len();
    if cfg.num_classes < 2 || d == 0 || cfg.test_per_class < 1 {
        return Err(Error::config("spectral data needs >= 2 classes and a nonempty spectrum"));
    }
    if cfg.train_per_class < d + 1 {
        return Err(Error::config(format!(
            "spectral data in {d} dimensions needs at least {} train samples per class",
            d + 1
        )));
    }
    if cfg.spectrum.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::config("spectrum values must be finite and non-negative"));
    }
    let n = cfg.train_per_class;
    let scale = Array1::from_iter(cfg.spectrum.iter().map(|v| v.sqrt()));
    let centers = blob_centers(&BlobVectorConfig {
        num_classes: cfg.num_classes,
        dim: d,
        separation: cfg.separation,
        seed: cfg.seed,
        ..BlobVectorConfig::default()
    });
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for c in 0..cfg.num_classes {
        let mut r = rng(derive_seed(cfg.seed, "spectral-class", c as u64));
        let rot = random_rotation(&mut r, d);
        // Centered Gaussian columns orthonormalized: Z^T Z = I, column sums 0.
        let z = loop {
            let mut g = Array2::from_shape_simple_fn((n, d + 1), || StandardNormal.sample(&mut r));
            g.column_mut(0).fill(1.0);
            if let Some(q) = orthonormal_columns(g) {
                break q.slice(ndarray::s![.., 1..]).to_owned();
            }
        };
        let shaped = (z * &scale) * ((n - 1) as f64).sqrt();
        train_rows.push(shaped.dot(&rot.t()) + &centers.row(c));
        let g = Array2::from_shape_simple_fn((cfg.test_per_class, d), || StandardNormal.sample(&mut r));
        test_rows.push((g * &scale).dot(&rot.t()) + &centers.row(c));
    }
    let interleave = |blocks: &[Array2<f64>], per: usize| {
        let k = blocks.len();
        let rows = Array2::from_shape_fn((per * k, d), |(i, j)| blocks[i % k][[i / k, j]]);
        let labels = (0..per * k).map(|i| i % k).collect();
        (rows, labels)
    };
    let tag = id_tag("spectral", cfg);
    let (tr, trl) = interleave(&train_rows, n);
    let (te, tel) = interleave(&test_rows, cfg.test_per_class);
    Dataset::new(
        "spectral",
        numbered_classes(cfg.num_classes),
        vectors_to_batch(tr, trl, &format!("{tag}/train-"))?,
        vectors_to_batch(te, tel, &format!("{tag}/test-"))?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::linalg::{mean_and_covariance, sym_eigen};

    #[test]
    fn spectral_training_covariance_is_exact() {
        let cfg = SpectralConfig::default();
        let ds = spectral(&cfg).unwrap();
        let idx: Vec<usize> = (0..ds.train.len()).filter(|&i| ds.train_labels()[i] == 1).collect();
        let x = ds.train.select(&idx).unwrap().pixels().clone().into_shape_with_order((idx.len(), 12)).unwrap();
        let (_, cov) = mean_and_covariance(x.view());
        let (vals, _) = sym_eigen(cov.view());
        for (a, b) in vals.iter().zip(&cfg.spectrum) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn blob_images_in_unit_range_and_balanced() {
        let ds = blob_images(&BlobImageConfig {
            train_per_class: 3,
            test_per_class: 2,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(ds.train.len(), 12);
        assert_eq!(ds.train_counts(), vec![3; 4]);
        assert!(ds.train.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn generators_are_deterministic() {
        let a = blob_vectors(&BlobVectorConfig::default()).unwrap();
        let b = blob_vectors(&BlobVectorConfig::default()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn dataset_rejects_out_of_range_label() {
        let px = Array4::zeros((2, 1, 1, 1));
        let b = ImageBatch::with_sequential_ids(px, Some(vec![0, 5]), "x").unwrap();
        assert!(Dataset::new("bad", numbered_classes(2), b.clone(), b).is_err());
    }
}
