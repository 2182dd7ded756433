//! Run configuration: one JSON document, every field optional, overridden
//! by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ballworld::WorldConfig;
use crate::error::{Error, Result};
use crate::evalharness::ProtocolConfig;
use crate::nnsub::AdamConfig;
use crate::paegan::{ArchConfig, SamplerLossConfig};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PAEGAN_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub episodes: usize,
    pub steps: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            episodes: 2000,
            steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PaeTraining {
    pub updates: u64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Checkpoint and log flush interval in updates.
    pub checkpoint_every: u64,
}

impl Default for PaeTraining {
    fn default() -> Self {
        PaeTraining {
            updates: 3000,
            batch_size: 16,
            adam: AdamConfig::default(),
            checkpoint_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerTraining {
    pub updates: u64,
    pub batch_size: usize,
    pub loss: SamplerLossConfig,
    pub d_update_period: u64,
    pub bank_episodes: usize,
    pub adam: AdamConfig,
    pub checkpoint_every: u64,
}

impl Default for SamplerTraining {
    fn default() -> Self {
        SamplerTraining {
            updates: 1000,
            batch_size: 8,
            loss: SamplerLossConfig::default(),
            d_update_period: 2,
            bank_episodes: 200,
            adam: AdamConfig::default(),
            checkpoint_every: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub pae: PaeTraining,
    pub sampler: SamplerTraining,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PfSettings {
    pub num_particles: usize,
    pub resample_threshold: f64,
}

impl Default for PfSettings {
    fn default() -> Self {
        PfSettings {
            num_particles: 1000,
            resample_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub data: DataConfig,
    pub arch: ArchConfig,
    pub training: TrainingConfig,
    pub protocol: ProtocolConfig,
    pub pf: PfSettings,
    pub paths: PathsConfig,
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Loads `path` if given, else the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    /// Output directory: config, then the environment, then `out`.
    pub fn out_dir(&self) -> PathBuf {
        self.paths
            .out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}
