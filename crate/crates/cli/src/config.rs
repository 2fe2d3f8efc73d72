use std::path::{Path, PathBuf};

use cyclekg_core::cycle::{Cycles, ScheduleConfig};
use cyclekg_core::data::{read_json, SyntheticConfig};
use cyclekg_core::model::ModelConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Unsupervised,
    Supervised,
}

/// Input files of a training run. Unset paths resolve inside `data_dir`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub data_dir: Option<PathBuf>,
    pub train_texts: Option<PathBuf>,
    pub train_graphs: Option<PathBuf>,
    pub train_pairs: Option<PathBuf>,
    pub dev_pairs: Option<PathBuf>,
}

/// Everything a run depends on. Stored verbatim in every run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: Mode,
    pub cycles: Cycles,
    pub device: String,
    /// Worker threads for per-example gradients and batch inference.
    pub workers: usize,
    pub data: SyntheticConfig,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub paths: DataPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            mode: Mode::Unsupervised,
            cycles: Cycles::Both,
            device: "cpu".into(),
            workers: 1,
            data: SyntheticConfig::default(),
            model: ModelConfig::desk(),
            schedule: ScheduleConfig::default(),
            paths: DataPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                read_json(p).map_err(|e| CliError::usage(format!("config {}: {e}", p.display())))
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.device != "cpu" {
            return Err(CliError::usage(format!(
                "unsupported device `{}` (only `cpu`)",
                self.device
            )));
        }
        if self.workers == 0 {
            return Err(CliError::usage(
                "invalid config field `workers`: must be positive",
            ));
        }
        self.model.validate().map_err(CliError::usage)?;
        self.schedule.validate().map_err(CliError::usage)
    }

    /// First 12 hex digits of the SHA-256 of the serialized config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))[..12].to_string()
    }

    pub fn run_name(&self) -> String {
        format!("seed{}-{}", self.seed, self.hash())
    }
}
