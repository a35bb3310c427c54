//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use dualspace_core::backbone::{Backbone, BackboneSpec, TapPoint, VisionTransformer};
use dualspace_core::benchmark::{
    blob_images, blob_vectors, load_cifar10, load_cifar100_coarse, load_fmnist, spectral, BlobImageConfig,
    BlobVectorConfig, Dataset, PipelineConfig, Setting, SpectralConfig, Variant,
};
use dualspace_core::diagnostics::{toy_dataset, DEFAULT_FLAG_THRESHOLD};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, CliResult};

pub const CACHE_ENV: &str = "DUALSPACE_CACHE";

/// Everything a subcommand needs. Serialized into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `blobs`, `blobs-vector`, `spectral`, `toy`, `cifar10`, `cifar100` or `fmnist`.
    pub dataset: String,
    /// Directory with the raw files of a real dataset.
    pub data_dir: Option<PathBuf>,
    pub limit_per_class: Option<usize>,
    pub setting: Setting,
    /// `mock`, `identity`, or the stem of a saved transformer archive.
    pub backbone: String,
    pub backbone_seed: u64,
    pub tap: TapPoint,
    pub variants: Vec<Variant>,
    pub blocks: Option<Vec<usize>>,
    /// Pivot class used by `train`.
    pub pivot: usize,
    pub trials: usize,
    pub seed: u64,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub flag_threshold: f64,
    pub pipeline: PipelineConfig,
    pub blobs: BlobImageConfig,
    pub blobs_vector: BlobVectorConfig,
    pub spectral: SpectralConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: "blobs".into(),
            data_dir: None,
            limit_per_class: None,
            setting: Setting::Unimodal,
            backbone: "mock".into(),
            backbone_seed: 0,
            tap: TapPoint::Residual,
            variants: vec![Variant::full()],
            blocks: None,
            pivot: 0,
            trials: 1,
            seed: 0,
            cache_dir: PathBuf::from(".dualspace-cache"),
            output_dir: PathBuf::from("dualspace-out"),
            flag_threshold: DEFAULT_FLAG_THRESHOLD,
            pipeline: PipelineConfig::default(),
            blobs: BlobImageConfig::default(),
            blobs_vector: BlobVectorConfig::default(),
            spectral: SpectralConfig::default(),
        }
    }
}

/// Flag values that replace file values when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub variants: Vec<String>,
    pub setting: Option<String>,
    pub dataset: Option<String>,
    pub blocks: Option<String>,
    pub energy: Option<f64>,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

fn parse_blocks(s: &str) -> CliResult<Vec<usize>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b) = (parse_index(a)?, parse_index(b)?);
                if a > b {
                    return Err(CliError::Config(format!("empty block range `{part}`")));
                }
                out.extend(a..=b);
            }
            None => out.push(parse_index(part)?),
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("no blocks given".into()));
    }
    Ok(out)
}

fn parse_index(s: &str) -> CliResult<usize> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Config(format!("bad block index `{s}`")))
}

impl RunConfig {
    /// Reads `path` (defaults when `None`), then applies overrides and the
    /// cache environment variable (a `--cache` flag wins over both).
    pub fn resolve(path: Option<&Path>, ov: &Overrides, env_cache: Option<PathBuf>) -> CliResult<Self> {
        let mut cfg: RunConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(c) = env_cache {
            cfg.cache_dir = c;
        }
        if let Some(c) = &ov.cache_dir {
            cfg.cache_dir = c.clone();
        }
        if let Some(o) = &ov.output_dir {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = ov.seed {
            cfg.seed = s;
        }
        if let Some(t) = ov.trials {
            cfg.trials = t;
        }
        if let Some(s) = &ov.setting {
            cfg.setting = s.parse()?;
        }
        if let Some(d) = &ov.dataset {
            cfg.dataset = d.clone();
        }
        if let Some(b) = &ov.blocks {
            cfg.blocks = Some(parse_blocks(b)?);
        }
        if !ov.variants.is_empty() {
            cfg.variants = ov.variants.iter().map(|v| v.parse()).collect::<Result<_, _>>()?;
        }
        if let Some(e) = ov.energy {
            for v in &mut cfg.variants {
                *v = Variant::new(v.features, v.scorer, e)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.trials == 0 {
            return Err(CliError::Config("trials must be >= 1".into()));
        }
        if self.variants.is_empty() {
            return Err(CliError::Config("at least one variant is required".into()));
        }
        if !(0.0..=1.0).contains(&self.flag_threshold) {
            return Err(CliError::Config("flag_threshold must lie in [0, 1]".into()));
        }
        self.pipeline.train.validate()?;
        Ok(())
    }

    /// Pipeline settings with the top-level block list applied.
    pub fn pipeline(&self) -> PipelineConfig {
        let mut p = self.pipeline.clone();
        if self.blocks.is_some() {
            p.blocks = self.blocks.clone();
        }
        p
    }

    pub fn load_dataset(&self) -> CliResult<Dataset> {
        let real_dir = || {
            self.data_dir
                .clone()
                .ok_or_else(|| CliError::Config(format!("dataset `{}` needs data_dir", self.dataset)))
        };
        let ds = match self.dataset.as_str() {
            "blobs" => blob_images(&self.blobs)?,
            "blobs-vector" => blob_vectors(&self.blobs_vector)?,
            "spectral" => spectral(&self.spectral)?,
            "toy" => toy_dataset(self.seed, true)?,
            "cifar10" => load_cifar10(&real_dir()?, self.limit_per_class)?,
            "cifar100" => load_cifar100_coarse(&real_dir()?, self.limit_per_class)?,
            "fmnist" => load_fmnist(&real_dir()?, self.limit_per_class)?,
            other => return Err(CliError::Config(format!("unknown dataset `{other}`"))),
        };
        Ok(ds)
    }

    pub fn load_backbone(&self) -> CliResult<Backbone> {
        match self.backbone.as_str() {
            "identity" => Ok(Backbone::Identity),
            "mock" => {
                let mut spec = BackboneSpec::mock();
                spec.tap = self.tap;
                Ok(Backbone::Vit(Box::new(VisionTransformer::mock(spec, self.backbone_seed)?)))
            }
            stem => Ok(Backbone::Vit(Box::new(VisionTransformer::load(Path::new(stem))?))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_lists_and_ranges() {
        assert_eq!(parse_blocks("2..4,7").unwrap(), vec![2, 3, 4, 7]);
        assert!(parse_blocks("4..2").is_err());
        assert!(parse_blocks("x").is_err());
    }

    #[test]
    fn overrides_win() {
        let ov = Overrides {
            seed: Some(9),
            variants: vec!["pretrained:knn2".into()],
            energy: Some(0.95),
            setting: Some("multimodal".into()),
            ..Default::default()
        };
        let c = RunConfig::resolve(None, &ov, Some("/tmp/x".into())).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.setting, Setting::Multimodal);
        assert_eq!(c.variants[0].to_string(), "pretrained:knn2:0.95");
        assert_eq!(c.cache_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("datset = \"blobs\"").is_err());
    }
}
