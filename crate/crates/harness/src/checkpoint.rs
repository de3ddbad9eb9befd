//! Checkpoint directories: `generator.safetensors`, `discriminator.safetensors`
//! and `meta.json` holding the configuration and its fingerprints.

use std::fs;
use std::path::Path;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::config::{architecture_fingerprint, TrainConfig};
use crate::error::{Error, Result};
use crate::net::{Discriminator, Generator};

pub const GENERATOR_FILE: &str = "generator.safetensors";
pub const DISCRIMINATOR_FILE: &str = "discriminator.safetensors";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub architecture_fingerprint: String,
    pub config_fingerprint: String,
    pub epochs_completed: usize,
    pub config: TrainConfig,
}

pub fn save_checkpoint(
    dir: &Path,
    generator: &Generator,
    discriminator: &Discriminator,
    config: &TrainConfig,
    epochs_completed: usize,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    generator.varmap().save(dir.join(GENERATOR_FILE))?;
    discriminator.varmap().save(dir.join(DISCRIMINATOR_FILE))?;
    let meta = CheckpointMeta {
        architecture_fingerprint: config.architecture_fingerprint(),
        config_fingerprint: config.fingerprint(),
        epochs_completed,
        config: config.clone(),
    };
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta).expect("meta serializes"))?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path)?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.clone(), message: e.to_string() })?;
    let recomputed = meta.config.architecture_fingerprint();
    if recomputed != meta.architecture_fingerprint {
        return Err(Error::Fingerprint { expected: recomputed, found: meta.architecture_fingerprint });
    }
    Ok(meta)
}

/// Loads the generator. With `expected`, the checkpoint's architecture must
/// match that configuration's.
pub fn load_generator(dir: &Path, expected: Option<&TrainConfig>) -> Result<(Generator, CheckpointMeta)> {
    let meta = read_meta(dir)?;
    if let Some(cfg) = expected {
        let want = architecture_fingerprint(&cfg.model, cfg.image_size);
        if want != meta.architecture_fingerprint {
            return Err(Error::Fingerprint { expected: want, found: meta.architecture_fingerprint });
        }
    }
    let mut generator = Generator::new(&meta.config.model, meta.config.image_size, 0, DType::F32)?;
    generator.varmap_mut().load(dir.join(GENERATOR_FILE))?;
    Ok((generator, meta))
}

pub fn load_discriminator(dir: &Path, meta: &CheckpointMeta) -> Result<Discriminator> {
    let mut d = Discriminator::new(&meta.config.model, meta.config.image_size, 0, DType::F32)?;
    d.varmap_mut().load(dir.join(DISCRIMINATOR_FILE))?;
    Ok(d)
}
