//! Experiment configuration, read from TOML.
//!
//! Every field has a default, so a file only lists what it changes. Unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Augmentation, DatasetSpec};
use crate::discriminator::DiscriminatorConfig;
use crate::generators::GeneratorConfig;
use crate::losses::LossWeights;
use crate::optim::AdamConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub discriminator: DiscriminatorConfig,
    pub generator: GeneratorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_iters: u64,
    /// Iterations at `lr_start` before the linear decay begins.
    pub warmup_iters: u64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub loss: LossWeights,
    pub seed: u64,
    pub checkpoint_interval: u64,
    pub eval_interval: u64,
    /// Rows written to the metrics log every this many iterations.
    pub log_interval: u64,
    /// Divides every iteration count (total, warm-up, intervals).
    pub scale_down: u64,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iters: 500_000,
            warmup_iters: 100_000,
            lr_start: 1e-4,
            lr_end: 1e-5,
            batch_size: 4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            loss: LossWeights::default(),
            seed: 0,
            checkpoint_interval: 10_000,
            eval_interval: 10_000,
            log_interval: 1,
            scale_down: 1,
            d_steps: 1,
        }
    }
}

/// Iteration counts after applying `scale_down`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub total_iters: u64,
    pub warmup_iters: u64,
    pub checkpoint_interval: u64,
    pub eval_interval: u64,
    pub log_interval: u64,
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn schedule(&self) -> Schedule {
        let f = self.scale_down.max(1);
        let div = |n: u64| (n + f / 2) / f;
        Schedule {
            total_iters: div(self.total_iters),
            warmup_iters: div(self.warmup_iters),
            checkpoint_interval: div(self.checkpoint_interval).max(1),
            eval_interval: div(self.eval_interval).max(1),
            log_interval: self.log_interval.max(1),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.scale_down == 0 {
            return bad("train.scale_down must be at least 1");
        }
        if self.warmup_iters > self.total_iters {
            return bad("train.warmup_iters must not exceed train.total_iters");
        }
        if !(self.lr_end <= self.lr_start && self.lr_end >= 0.0) {
            return bad("train.lr_end must be in [0, lr_start]");
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be positive");
        }
        if self.d_steps == 0 {
            return bad("train.d_steps must be at least 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("train.adam_beta1 and train.adam_beta2 must be in [0, 1)");
        }
        if self.weight_decay < 0.0 {
            return bad("train.weight_decay must be non-negative");
        }
        self.loss
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source_dir: PathBuf,
    pub target_dir: PathBuf,
    pub augmentation: Augmentation,
    /// Decode every image once at start-up instead of on every use.
    pub preload: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source_dir: PathBuf::from("data/source"),
            target_dir: PathBuf::from("data/target"),
            augmentation: Augmentation::AnimeStyle,
            preload: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub embedder: String,
    /// KID block size; `min(n, 100)` when absent.
    pub kid_block_size: Option<usize>,
    /// Source images translated for each periodic evaluation.
    pub num_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            embedder: crate::metrics::ToyConvEmbedder::TAG.to_string(),
            kid_block_size: None,
            num_samples: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Side length of the square training images.
    pub image_size: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.image_size == 0 {
            return Err(ConfigError::Invalid("image_size must be positive".into()));
        }
        self.train.validate()
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            source_dir: self.data.source_dir.clone(),
            target_dir: self.data.target_dir.clone(),
            augmentation: self.data.augmentation,
            output_size: self.image_size,
        }
    }

    /// Desk-scale preset for the stripes-to-checkers texture task written
    /// by [`crate::data::toy::write_texture_domains`] under `root`.
    pub fn toy_textures(root: &Path) -> Self {
        let mut cfg = Self {
            image_size: 64,
            ..Default::default()
        };
        cfg.model.generator.base_channels = 8;
        cfg.model.generator.num_residual_blocks = 3;
        cfg.model.discriminator.base_channels = 16;
        cfg.model.discriminator.channel_cap = 128;
        cfg.train.total_iters = 2000;
        cfg.train.warmup_iters = 400;
        cfg.train.lr_start = 4e-4;
        cfg.train.lr_end = 4e-5;
        cfg.train.checkpoint_interval = 500;
        cfg.train.eval_interval = 500;
        cfg.data.source_dir = root.join("source");
        cfg.data.target_dir = root.join("target");
        cfg.data.augmentation = Augmentation::None;
        cfg.data.preload = true;
        cfg.eval.num_samples = 200;
        cfg
    }

    /// SHA-256 of the model section, which fixes every parameter block's
    /// name and shape.
    pub fn model_hash(&self) -> String {
        let json = serde_json::to_string(&(&self.image_size, &self.model)).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
