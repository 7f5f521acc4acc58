use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{BottleneckKind, ModelConfig};
use crate::diffnum::AdamConfig;
use crate::error::{Error, Result};

/// Everything that determines a training run. Serialized field names are the
/// JSON config keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: BottleneckKind,
    pub iterations: usize,
    /// Bundles per iteration, drawn with replacement.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub beta_temp: f64,
    pub gumbel_scale: f64,
    pub sigma_codebook: f64,
    pub latent_dim: usize,
    pub codebook_size: usize,
    pub channels: usize,
    pub points: usize,
    pub kl_weight: f64,
    pub commitment: f64,
    pub ema_decay: f64,
    pub ema_eps: f64,
    pub checkpoint_path: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
    /// Checkpoint cadence in iterations; 0 writes only the final checkpoint.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        TrainConfig {
            arch: m.kind,
            iterations: 2000,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            beta_temp: m.beta_temp,
            gumbel_scale: m.gumbel_scale,
            sigma_codebook: m.sigma_codebook,
            latent_dim: m.latent_dim,
            codebook_size: m.codebook_size,
            channels: m.channels,
            points: m.points,
            kl_weight: m.kl_weight,
            commitment: m.commitment,
            ema_decay: m.ema_decay,
            ema_eps: m.ema_eps,
            checkpoint_path: None,
            log_path: None,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            kind: self.arch,
            points: self.points,
            channels: self.channels,
            latent_dim: self.latent_dim,
            codebook_size: self.codebook_size,
            beta_temp: self.beta_temp,
            gumbel_scale: self.gumbel_scale,
            sigma_codebook: self.sigma_codebook,
            kl_weight: self.kl_weight,
            commitment: self.commitment,
            ema_decay: self.ema_decay,
            ema_eps: self.ema_eps,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, ..AdamConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Config("iterations and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        self.model_config().validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
