use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uar_core::regularizers::{RegularizerSpec, DEFAULT_ACTIVATION_EPOCH};

use crate::error::{Error, Result};
use crate::net::ModelConfig;
use crate::objectives::LossWeights;
use crate::schedule::Schedule;

/// One training run, as read from a TOML file. Missing keys take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: Schedule,
    pub weights: LossWeights,
    pub reg_spec: RegularizerSpec,
    pub activation_epoch: usize,
    pub image_size: usize,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            lr: 1e-4,
            schedule: Schedule::default(),
            weights: LossWeights::default(),
            reg_spec: RegularizerSpec::default(),
            activation_epoch: DEFAULT_ACTIVATION_EPOCH,
            image_size: 64,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

#[derive(Serialize)]
struct Architecture<'a> {
    image_size: usize,
    model: &'a ModelConfig,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        let floor = self.schedule.floor();
        if !(floor.is_finite() && floor >= 0.0 && floor <= self.lr) {
            return Err(Error::Config(format!("schedule floor must lie in [0, lr], got {floor}")));
        }
        self.weights.validate()?;
        self.reg_spec.validate()?;
        self.model.validate(self.image_size)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_toml())?)
    }

    /// SHA-256 over the canonical JSON form of the whole configuration.
    pub fn fingerprint(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// SHA-256 over the parts that determine the weight layout.
    pub fn architecture_fingerprint(&self) -> String {
        architecture_fingerprint(&self.model, self.image_size)
    }
}

pub fn architecture_fingerprint(model: &ModelConfig, image_size: usize) -> String {
    let arch = Architecture { image_size, model };
    sha256_hex(serde_json::to_string(&arch).expect("architecture serializes").as_bytes())
}
