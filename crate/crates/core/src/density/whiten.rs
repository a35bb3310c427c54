use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::linalg::{mean_and_covariance, sym_eigen};
use crate::archive::{to_array1, to_array2, TensorArchive};
use crate::error::{ensure_dim, Error, Result};
use crate::features::FeatureMatrix;

/// Eigenvalues at or below this fraction of the largest are treated as zero.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Truncated PCA whitening: `(x - mean) . projection`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitenTransform {
    pub mean: Array1<f64>,
    /// `d x r`, columns are principal directions scaled by `1 / sqrt(lambda)`.
    pub projection: Array2<f64>,
    /// The `r` retained eigenvalues, descending.
    pub eigenvalues: Array1<f64>,
    pub energy_threshold: f64,
    /// Full spectrum of the training covariance, descending.
    pub spectrum: Array1<f64>,
}

impl WhitenTransform {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Fraction of the (floored) total variance kept.
    pub fn retained_energy(&self) -> f64 {
        let total: f64 = self.spectrum.iter().filter(|&&v| v > 0.0).sum();
        self.eigenvalues.sum() / total
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        ensure_dim(self.input_dim(), x.ncols(), "whitener input columns")?;
        Ok((&x - &self.mean).dot(&self.projection))
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut a = TensorArchive::new(
            "whiten_transform",
            serde_json::json!({ "energy_threshold": self.energy_threshold }),
        );
        a.push("mean", self.mean.view().into_dyn());
        a.push("projection", self.projection.view().into_dyn());
        a.push("eigenvalues", self.eigenvalues.view().into_dyn());
        a.push("spectrum", self.spectrum.view().into_dyn());
        a
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self> {
        if a.kind != "whiten_transform" {
            return Err(Error::invalid(format!("expected a whitener archive, found `{}`", a.kind)));
        }
        let energy_threshold = a.metadata["energy_threshold"]
            .as_f64()
            .ok_or_else(|| Error::invalid("whitener archive lacks energy_threshold"))?;
        let w = Self {
            mean: to_array1(a.get("mean")?, "mean")?,
            projection: to_array2(a.get("projection")?, "projection")?,
            eigenvalues: to_array1(a.get("eigenvalues")?, "eigenvalues")?,
            energy_threshold,
            spectrum: to_array1(a.get("spectrum")?, "spectrum")?,
        };
        ensure_dim(w.mean.len(), w.projection.nrows(), "whitener projection rows")?;
        ensure_dim(w.eigenvalues.len(), w.projection.ncols(), "whitener projection columns")?;
        Ok(w)
    }
}

/// Number of leading eigenvalues (sorted descending) whose running sum first
/// reaches `threshold` of the total. Eigenvalues at or below
/// `EIGEN_FLOOR * max` count as zero and are never retained.
pub fn retained_dimension(eigenvalues: &[f64], threshold: f64) -> usize {
    let max = eigenvalues.first().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return 0;
    }
    let kept: Vec<f64> = eigenvalues.iter().copied().take_while(|&v| v > EIGEN_FLOOR * max).collect();
    let total: f64 = kept.iter().sum();
    let mut acc = 0.0;
    for (i, v) in kept.iter().enumerate() {
        acc += v;
        if acc >= threshold * total {
            return i + 1;
        }
    }
    kept.len()
}

pub fn fit_whitener(train: &FeatureMatrix, energy_threshold: f64) -> Result<WhitenTransform> {
    if !(energy_threshold > 0.0 && energy_threshold <= 1.0) {
        return Err(Error::config(format!(
            "energy threshold must lie in (0, 1], got {energy_threshold}"
        )));
    }
    fit_whitener_values(train.values(), energy_threshold)
}

pub(crate) fn fit_whitener_values(x: ArrayView2<f64>, energy_threshold: f64) -> Result<WhitenTransform> {
    if x.nrows() < 2 {
        return Err(Error::invalid("whitening needs at least two samples"));
    }
    let (mean, cov) = mean_and_covariance(x);
    let (spectrum, vectors) = sym_eigen(cov.view());
    let r = retained_dimension(spectrum.as_slice().expect("contiguous"), energy_threshold);
    if r == 0 {
        return Err(Error::numerical("training features have zero variance"));
    }
    let eigenvalues = spectrum.slice(ndarray::s![..r]).to_owned();
    let mut projection = vectors.slice(ndarray::s![.., ..r]).to_owned();
    for (mut col, &l) in projection.axis_iter_mut(Axis(1)).zip(eigenvalues.iter()) {
        col /= l.sqrt();
    }
    log::debug!("whitener keeps {r} of {} dimensions", x.ncols());
    Ok(WhitenTransform {
        mean,
        projection,
        eigenvalues,
        energy_threshold,
        spectrum,
    })
}

pub fn apply_whitener(w: &WhitenTransform, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    x.with_values(w.apply(x.values())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn line_needs_one_component() {
        let x = array![[0.0, 0.0], [1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        let w = fit_whitener(&FeatureMatrix::from_array(x).unwrap(), 0.9).unwrap();
        assert_eq!(w.output_dim(), 1);
        assert!(w.projection.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn threshold_one_keeps_all() {
        let x = array![[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [4.0, 1.0, 0.0], [2.0, 2.0, 2.0], [0.5, 3.0, 1.0]];
        let w = fit_whitener(&FeatureMatrix::from_array(x).unwrap(), 1.0).unwrap();
        assert_eq!(w.output_dim(), 3);
    }

    #[test]
    fn mean_rows_map_to_zero() {
        let x = array![[0.0, 1.0], [2.0, 5.0], [1.0, 0.0]];
        let w = fit_whitener(&FeatureMatrix::from_array(x).unwrap(), 1.0).unwrap();
        let q = Array2::from_shape_fn((4, 2), |(_, j)| w.mean[j]);
        assert!(w.apply(q.view()).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn retained_dimension_minimal() {
        assert_eq!(retained_dimension(&[5.0, 3.0, 2.0], 0.5), 1);
        assert_eq!(retained_dimension(&[5.0, 3.0, 2.0], 0.51), 2);
        assert_eq!(retained_dimension(&[5.0, 3.0, 2.0], 0.8), 2);
        assert_eq!(retained_dimension(&[5.0, 3.0, 2.0], 1.0), 3);
        assert_eq!(retained_dimension(&[5.0, 3.0, 1e-20], 1.0), 2);
    }

    #[test]
    fn rejects_bad_threshold_and_single_row() {
        let x = FeatureMatrix::from_array(array![[1.0, 2.0]]).unwrap();
        assert!(fit_whitener(&x, 0.0).is_err());
        assert!(fit_whitener(&x, 1.5).is_err());
        assert!(fit_whitener(&x, 0.9).is_err());
    }
}
