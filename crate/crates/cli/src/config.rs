//! Versioned run configuration.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use hydra_core::data::DataConfig;
use hydra_core::eval::EvalConfig;
use hydra_core::metrics::{FeatureExtractor, PatchExtractor, ProjectionExtractor};
use hydra_core::model::ModelConfig;
use hydra_core::sim::SimConfig;
use hydra_core::trainer::OptimConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CONFIG_VERSION: u32 = 1;

/// Side length of the resized subject crops fed to feature extractors.
pub const CROP_SIZE: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Master seed for dataset generation, initialization and batching.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Event-bearing clips to keep.
    pub clips: usize,
    /// Candidates rendered per kept clip before giving up.
    pub max_attempts_per_clip: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            clips: 200,
            max_attempts_per_clip: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub log_interval: u64,
    /// Steps between checkpoints; `0` writes only the final one.
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            log_interval: 10,
            checkpoint_interval: 500,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    Patch,
    Projection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub sample_steps: usize,
    pub seed: u64,
    pub extractor: ExtractorKind,
    pub projection_dim: usize,
    pub bootstrap_resamples: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            sample_steps: e.sample_steps,
            seed: e.seed,
            extractor: ExtractorKind::Patch,
            projection_dim: 64,
            bootstrap_resamples: 1000,
        }
    }
}

impl EvalSection {
    pub fn sampler(&self) -> EvalConfig {
        EvalConfig {
            sample_steps: self.sample_steps,
            seed: self.seed,
        }
    }

    pub fn extractor(&self) -> Box<dyn FeatureExtractor> {
        match self.extractor {
            ExtractorKind::Patch => Box::new(PatchExtractor),
            ExtractorKind::Projection => {
                Box::new(ProjectionExtractor::new(3 * CROP_SIZE * CROP_SIZE, self.projection_dim, self.seed))
            }
        }
    }
}

/// The settings that determine clip content. Clip counts are left out so
/// splits of different sizes from one generator stay compatible.
#[derive(Serialize)]
struct DataIdentity<'a> {
    version: u32,
    sim: &'a SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            sim: SimConfig::default(),
            dataset: DatasetConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("parsing run config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            bail!("config version {} is not supported (expected {CONFIG_VERSION})", self.version);
        }
        self.sim.validate()?;
        self.data.validate()?;
        self.model.validate()?;
        if self.dataset.clips == 0 {
            bail!("dataset.clips must be positive");
        }
        if self.train.batch_size == 0 || self.train.log_interval == 0 {
            bail!("train.batch_size and train.log_interval must be positive");
        }
        if self.eval.sample_steps == 0 {
            bail!("eval.sample_steps must be positive");
        }
        Ok(())
    }

    /// Canonical serialization; the config hash is taken over this text.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }

    /// Hash of the settings that determine generated data; stamped into
    /// dataset manifests and checkpoints.
    pub fn data_hash(&self) -> String {
        let id = DataIdentity {
            version: self.version,
            sim: &self.sim,
        };
        sha256_hex(toml::to_string(&id).expect("data identity serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_text_roundtrips() {
        let cfg = RunConfig::default();
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("version = 1\nbogus = 3\n").is_err());
        assert!(RunConfig::parse("version = 1\n[model]\nwidht = 3\n").is_err());
    }

    #[test]
    fn version_is_required_and_checked() {
        assert!(RunConfig::parse("seed = 1\n").is_err());
        assert!(RunConfig::parse("version = 2\n").is_err());
        assert_eq!(RunConfig::parse("version = 1\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn data_hash_ignores_model_settings() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.model.retrieved_tokens = 3;
        b.dataset.clips = 7;
        assert_eq!(a.data_hash(), b.data_hash());
        assert_ne!(a.hash(), b.hash());
        b.sim.num_frames = 40;
        assert_ne!(a.data_hash(), b.data_hash());
    }
}
