//! Experiment configuration: one JSON file is the single source of
//! truth for a run. Unknown keys are rejected, and a hash of the
//! canonical serialization is embedded in every produced artifact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::BackboneConfig;
use crate::degrade::RangeTable;
use crate::error::{Error, Result};
use crate::prompt::PromptConfig;
use crate::trainer::{TrainConfig, Variant};

fn default_variant() -> Variant {
    Variant::Full
}
fn default_train_fraction() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory of clean source images (PNG or TIFF, grayscale).
    pub clean_dir: PathBuf,
    /// All artifacts (corpora, checkpoints, logs, reports) go here.
    pub output_dir: PathBuf,
    /// Master seed for corpus synthesis and dataset splits.
    pub seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub ranges: RangeTable,
    #[serde(default = "default_variant")]
    pub variant: Variant,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clean_dir.as_os_str().is_empty() || self.output_dir.as_os_str().is_empty() {
            return Err(Error::InvalidConfig("clean_dir and output_dir must be set".into()));
        }
        if !(0.0 < self.train_fraction && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        self.train.validate()?;
        self.backbone.validate()?;
        self.prompt.validate()?;
        self.ranges.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_slice(&body)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = serde_json::to_vec_pretty(self)?;
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    /// Hash of the canonical (compact JSON) serialization; embedded in
    /// artifacts so outputs can be traced to the exact configuration.
    pub fn hash(&self) -> String {
        let body = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&body);
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }
}
