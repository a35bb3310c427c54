use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{Backbone, FeatureBank, HiddenStates, ImageBatch};
use crate::error::{Error, Result};
use crate::io::{atomic_write, f32_from_le_bytes, f32_to_le_bytes, hash_parts, sha256_hex};

/// JSON sidecar stored next to every cached `.f32` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarMeta {
    pub shape: Vec<usize>,
    pub backbone: String,
    pub dataset: String,
    pub split: String,
    /// SHA-256 of the binary payload.
    pub content_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheOutcome {
    Hit,
    Miss,
    /// Entry existed but failed validation and was re-extracted.
    Corrupted,
}

#[derive(Debug, Serialize, Deserialize)]
struct Index {
    backbone: String,
    ids: Vec<String>,
    hidden_states: usize,
}

/// On-disk cache of extracted feature banks.
///
/// Each entry lives in `<root>/<key>/` where the key hashes the backbone
/// identifier, preprocessing parameters and sample ids. Arrays are
/// little-endian `f32`, row-major; `index.json` is written last and marks a
/// complete entry.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    root: PathBuf,
}

impl FeatureCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn key(backbone: &Backbone, ids: &[String]) -> String {
        let id = backbone.identifier();
        let pre = backbone.preprocessing_tag();
        let parts = [id.as_str(), pre.as_str()]
            .into_iter()
            .chain(ids.iter().map(String::as_str));
        hash_parts(parts)[..32].to_string()
    }

    pub fn entry_dir(&self, key: &str) -> PathBuf {
        self.root.join(key)
    }

    pub fn store(&self, key: &str, bank: &FeatureBank, backbone: &str, dataset: &str, split: &str) -> Result<()> {
        let dir = self.entry_dir(key);
        fs::create_dir_all(&dir)?;
        let meta = |shape: Vec<usize>, hash: String| SidecarMeta {
            shape,
            backbone: backbone.to_string(),
            dataset: dataset.to_string(),
            split: split.to_string(),
            content_hash: hash,
        };
        write_array(&dir, "pretrained", bank.pretrained.iter().copied(), bank.pretrained.shape(), &meta)?;
        let mut hidden_states = 0;
        if let Some(h) = &bank.hidden {
            for (k, s) in h.states().iter().enumerate() {
                write_array(&dir, &format!("hidden_{k:02}"), s.iter().copied(), s.shape(), &meta)?;
            }
            hidden_states = h.states().len();
        }
        let index = Index {
            backbone: backbone.to_string(),
            ids: bank.ids.clone(),
            hidden_states,
        };
        atomic_write(&dir.join("index.json"), serde_json::to_string(&index)?.as_bytes())
    }

    /// Loads a complete, valid entry. `Ok(None)` when absent; `Err` when present but invalid.
    pub fn load(&self, key: &str, backbone: &str) -> Result<Option<FeatureBank>> {
        let dir = self.entry_dir(key);
        let index_path = dir.join("index.json");
        if !index_path.exists() {
            return Ok(None);
        }
        let index: Index = serde_json::from_slice(&fs::read(&index_path)?)?;
        if index.backbone != backbone {
            return Err(Error::invalid(format!(
                "cache entry {key} was written by backbone `{}`",
                index.backbone
            )));
        }
        let pretrained: Array2<f64> = read_array(&dir, "pretrained", backbone)?
            .into_dimensionality()
            .map_err(|_| Error::invalid("cached pretrained features are not 2-D"))?;
        let hidden = if index.hidden_states > 0 {
            let states = (0..index.hidden_states)
                .map(|k| {
                    read_array(&dir, &format!("hidden_{k:02}"), backbone)?
                        .into_dimensionality::<ndarray::Ix3>()
                        .map_err(|_| Error::invalid("cached hidden state is not 3-D"))
                })
                .collect::<Result<Vec<Array3<f64>>>>()?;
            Some(HiddenStates::new(states)?)
        } else {
            None
        };
        if pretrained.nrows() != index.ids.len() {
            return Err(Error::invalid("cached row count does not match ids"));
        }
        Ok(Some(FeatureBank {
            ids: index.ids,
            pretrained,
            hidden,
        }))
    }

    /// Returns the cached bank for `raw` or extracts and stores it.
    ///
    /// Freshly extracted banks are rounded through `f32` so warm and cold
    /// runs see identical values.
    pub fn get_or_extract(
        &self,
        backbone: &Backbone,
        raw: &ImageBatch,
        dataset: &str,
        split: &str,
    ) -> Result<(FeatureBank, CacheOutcome)> {
        let key = Self::key(backbone, raw.ids());
        let id = backbone.identifier();
        let outcome = match self.load(&key, &id) {
            Ok(Some(bank)) => return Ok((bank, CacheOutcome::Hit)),
            Ok(None) => CacheOutcome::Miss,
            Err(e) => {
                log::warn!("cache entry {key} is invalid ({e}); re-extracting");
                CacheOutcome::Corrupted
            }
        };
        let bank = backbone.encode(raw)?.quantized();
        self.store(&key, &bank, &id, dataset, split)?;
        Ok((bank, outcome))
    }
}

fn write_array(
    dir: &Path,
    name: &str,
    values: impl IntoIterator<Item = f64>,
    shape: &[usize],
    meta: &dyn Fn(Vec<usize>, String) -> SidecarMeta,
) -> Result<()> {
    let bytes = f32_to_le_bytes(values);
    let sidecar = meta(shape.to_vec(), sha256_hex(&bytes));
    atomic_write(&dir.join(format!("{name}.f32")), &bytes)?;
    atomic_write(
        &dir.join(format!("{name}.json")),
        serde_json::to_string_pretty(&sidecar)?.as_bytes(),
    )
}

fn read_array(dir: &Path, name: &str, backbone: &str) -> Result<ArrayD<f64>> {
    let sidecar: SidecarMeta = serde_json::from_slice(&fs::read(dir.join(format!("{name}.json")))?)?;
    let bytes = fs::read(dir.join(format!("{name}.f32")))?;
    let len: usize = sidecar.shape.iter().product();
    if bytes.len() != len * 4 {
        return Err(Error::invalid(format!(
            "{name}.f32 has {} bytes, sidecar shape needs {}",
            bytes.len(),
            len * 4
        )));
    }
    if sha256_hex(&bytes) != sidecar.content_hash {
        return Err(Error::invalid(format!("{name}.f32 content hash mismatch")));
    }
    if sidecar.backbone != backbone {
        return Err(Error::invalid(format!("{name}.json names backbone `{}`", sidecar.backbone)));
    }
    ArrayD::from_shape_vec(IxDyn(&sidecar.shape), f32_from_le_bytes(&bytes)?)
        .map_err(|e| Error::invalid(e.to_string()))
}
