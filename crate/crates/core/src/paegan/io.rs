//! Model checkpoints: a parameter file plus a `<file>.json` sidecar holding
//! the architecture, training configuration and progress.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ArchConfig, DiscriminatorModel, PaeModel, SamplerModel};
use crate::error::{Error, Result};
use crate::nnsub::checkpoint;

const FORMAT: &str = "paegan-model-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pae,
    Sampler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub format: String,
    pub stage: Stage,
    pub arch: ArchConfig,
    /// Updates completed; training resumes from here.
    pub updates_done: u64,
    pub seed: u64,
    pub training: serde_json::Value,
    /// Checksum of the parameters in the checkpoint.
    pub checksum: String,
    /// For the sampler stage: checksum of the frozen PAE it was trained on.
    pub pae_checksum: Option<String>,
}

impl ModelSidecar {
    pub fn new(stage: Stage, arch: ArchConfig, updates_done: u64, seed: u64, training: serde_json::Value) -> Self {
        ModelSidecar {
            format: FORMAT.into(),
            stage,
            arch,
            updates_done,
            seed,
            training,
            checksum: String::new(),
            pae_checksum: None,
        }
    }
}

pub fn sidecar_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_sidecar(ckpt: &Path, sidecar: &ModelSidecar) -> Result<()> {
    let path = sidecar_path(ckpt);
    let text = serde_json::to_string_pretty(sidecar)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_sidecar(ckpt: &Path) -> Result<ModelSidecar> {
    let path = sidecar_path(ckpt);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let s: ModelSidecar = serde_json::from_str(&text)?;
    if s.format != FORMAT {
        return Err(Error::Format {
            path,
            reason: format!("unexpected format tag {:?}", s.format),
        });
    }
    Ok(s)
}

pub fn save_pae(path: &Path, pae: &PaeModel<f32>, mut sidecar: ModelSidecar) -> Result<()> {
    sidecar.stage = Stage::Pae;
    sidecar.checksum = pae.store().checksum();
    checkpoint::save(pae.store(), path)?;
    write_sidecar(path, &sidecar)
}

/// Loads a PAE checkpoint; anything but a PAE stage is rejected.
pub fn load_pae(path: &Path) -> Result<(PaeModel<f32>, ModelSidecar)> {
    if !path.exists() {
        return Err(Error::MissingStage(format!("PAE checkpoint {} does not exist", path.display())));
    }
    let sidecar = read_sidecar(path)?;
    if sidecar.stage != Stage::Pae {
        return Err(Error::MissingStage(format!("{} is not a PAE checkpoint", path.display())));
    }
    let store = checkpoint::load(path)?;
    Ok((PaeModel::from_store(sidecar.arch.clone(), store)?, sidecar))
}

/// Saves sampler and discriminator together in one checkpoint.
pub fn save_gan(
    path: &Path,
    sampler: &SamplerModel<f32>,
    disc: &DiscriminatorModel<f32>,
    mut sidecar: ModelSidecar,
) -> Result<()> {
    let mut store = sampler.store().clone();
    store.merge(disc.store().clone())?;
    sidecar.stage = Stage::Sampler;
    sidecar.checksum = store.checksum();
    checkpoint::save(&store, path)?;
    write_sidecar(path, &sidecar)
}

pub fn load_gan(path: &Path) -> Result<(SamplerModel<f32>, DiscriminatorModel<f32>, ModelSidecar)> {
    if !path.exists() {
        return Err(Error::MissingStage(format!("sampler checkpoint {} does not exist", path.display())));
    }
    let sidecar = read_sidecar(path)?;
    if sidecar.stage != Stage::Sampler {
        return Err(Error::MissingStage(format!("{} is not a sampler checkpoint", path.display())));
    }
    let store = checkpoint::load(path)?;
    let sampler = SamplerModel::from_store(sidecar.arch.clone(), store.with_prefix("sampler."))?;
    let disc = DiscriminatorModel::from_store(sidecar.arch.clone(), store.with_prefix("disc."))?;
    Ok((sampler, disc, sidecar))
}
