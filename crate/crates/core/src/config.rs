//! Run configuration: defaults, then a TOML file, then command-line flags.
//! One global seed fans out to per-module seeds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::model::train::TrainConfig;
use crate::model::ModelConfig;
use crate::planner::PlannerConfig;

pub const SNAPSHOT_NAME: &str = "resolved_config.toml";

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the subsystem named `label`; adding a label never changes the
/// seeds of the others.
pub fn derive_seed(global: u64, label: &str) -> u64 {
    splitmix64(global ^ fnv1a64(label.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// `error`, `warn`, `info`, `debug` or `trace`.
    pub verbosity: String,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub planner: PlannerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            verbosity: "info".into(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            planner: PlannerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("run config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Fills module seeds from the global seed and validates every section.
    pub fn resolve(mut self) -> Result<Self> {
        self.dataset.seed = derive_seed(self.seed, "dataset");
        self.eval.seed = derive_seed(self.seed, "eval");
        self.planner.seed = derive_seed(self.seed, "planner");
        self.dataset.scene.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        self.planner.validate()?;
        if !["error", "warn", "info", "debug", "trace"].contains(&self.verbosity.as_str()) {
            return Err(Error::invalid(format!("unknown verbosity `{}`", self.verbosity)));
        }
        Ok(self)
    }

    pub fn seed_for(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }

    /// Writes the snapshot into `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(SNAPSHOT_NAME);
        std::fs::write(&path, self.to_toml_string()).map_err(|e| Error::io(&path, e))
    }
}
