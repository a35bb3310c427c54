//! JSON manifest plus little-endian `f64` payload, used for model weights,
//! student checkpoints and fitted density models.
//!
//! `<stem>.json` holds `{version, kind, metadata, tensors: [{name, shape, offset}]}`
//! and `<stem>.bin` holds the concatenated tensors in row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, ArrayViewD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write, f64_from_le_bytes, f64_to_le_bytes, sha256_hex};

pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements into the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub kind: String,
    pub metadata: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    pub payload_sha256: String,
}

/// In-memory archive: named tensors plus free-form metadata.
#[derive(Debug, Clone, Default)]
pub struct TensorArchive {
    pub kind: String,
    pub metadata: serde_json::Value,
    tensors: Vec<(String, ArrayD<f64>)>,
}

impl TensorArchive {
    pub fn new(kind: impl Into<String>, metadata: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            metadata,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: ArrayViewD<'_, f64>) {
        self.tensors.push((name.into(), tensor.to_owned()));
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::invalid(format!("archive `{}` has no tensor `{name}`", self.kind)))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn paths(stem: &Path) -> (PathBuf, PathBuf) {
        (stem.with_extension("json"), stem.with_extension("bin"))
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            let std = t.as_standard_layout();
            payload.extend(f64_to_le_bytes(std.as_slice().expect("standard layout")));
            offset += t.len();
        }
        let manifest = Manifest {
            version: ARCHIVE_VERSION,
            kind: self.kind.clone(),
            metadata: self.metadata.clone(),
            tensors: entries,
            payload_sha256: sha256_hex(&payload),
        };
        let (json_path, bin_path) = Self::paths(stem);
        atomic_write(&bin_path, &payload)?;
        atomic_write(&json_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (json_path, bin_path) = Self::paths(stem);
        let manifest: Manifest = serde_json::from_slice(&fs::read(&json_path)?)?;
        if manifest.version != ARCHIVE_VERSION {
            return Err(Error::invalid(format!(
                "{}: unsupported archive version {}",
                json_path.display(),
                manifest.version
            )));
        }
        let bytes = fs::read(&bin_path)?;
        if sha256_hex(&bytes) != manifest.payload_sha256 {
            return Err(Error::invalid(format!("{}: payload hash mismatch", bin_path.display())));
        }
        let values = f64_from_le_bytes(&bytes)?;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in manifest.tensors {
            let len: usize = entry.shape.iter().product();
            let end = entry.offset + len;
            if end > values.len() {
                return Err(Error::invalid(format!(
                    "{}: tensor `{}` exceeds payload",
                    bin_path.display(),
                    entry.name
                )));
            }
            let t = ArrayD::from_shape_vec(IxDyn(&entry.shape), values[entry.offset..end].to_vec())
                .map_err(|e| Error::invalid(format!("tensor `{}`: {e}", entry.name)))?;
            tensors.push((entry.name, t));
        }
        Ok(Self {
            kind: manifest.kind,
            metadata: manifest.metadata,
            tensors,
        })
    }
}

pub(crate) fn to_array1(t: &ArrayD<f64>, name: &str) -> Result<ndarray::Array1<f64>> {
    t.clone()
        .into_dimensionality()
        .map_err(|_| Error::invalid(format!("tensor `{name}` is not 1-D")))
}

pub(crate) fn to_array2(t: &ArrayD<f64>, name: &str) -> Result<ndarray::Array2<f64>> {
    t.clone()
        .into_dimensionality()
        .map_err(|_| Error::invalid(format!("tensor `{name}` is not 2-D")))
}
