//! Training checkpoints.
//!
//! One JSON container holds everything needed to resume bit-exactly:
//! parameters, optimizer moments, the sampler RNG state, and the
//! configuration that built the model. Floats round-trip exactly
//! through JSON, so a resumed run reproduces an uninterrupted one.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::degrade::RangeTable;
use crate::error::{Error, Result};
use crate::model::ConditionedModel;
use crate::optim::Adam;
use crate::prompt::PromptConfig;
use crate::trainer::{TrainConfig, TrainSession, Variant};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub global_step: u64,
    pub variant: Variant,
    pub backbone_config: BackboneConfig,
    pub prompt_config: Option<PromptConfig>,
    pub train_config: TrainConfig,
    pub range_table: RangeTable,
    pub params: Vec<f64>,
    pub optimizer: Adam,
    pub rng: ChaCha12Rng,
    /// Hash of the experiment config that produced this run, when one
    /// was used.
    #[serde(default)]
    pub config_hash: Option<String>,
}

impl Checkpoint {
    pub fn from_session(session: &TrainSession, config_hash: Option<String>) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            global_step: session.step,
            variant: session.variant,
            backbone_config: session.model.backbone.cfg,
            prompt_config: session.model.prompt.as_ref().map(|p| p.cfg),
            train_config: session.cfg,
            range_table: session.table.clone(),
            params: session.params.clone(),
            optimizer: session.opt.clone(),
            rng: session.rng.clone(),
            config_hash,
        }
    }

    /// Rebuilds a live session. The model structure is derived from the
    /// stored configs; stored parameters replace the fresh init.
    pub fn into_session(self) -> Result<TrainSession> {
        let (model, fresh) =
            ConditionedModel::build(self.backbone_config, self.prompt_config, 0)?;
        if fresh.len() != self.params.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "parameter count {} does not match the stored configuration (expected {})",
                self.params.len(),
                fresh.len()
            )));
        }
        let mut session = TrainSession::new(
            model,
            self.params,
            self.train_config,
            self.range_table,
            self.variant,
        )?;
        session.opt = self.optimizer;
        session.rng = self.rng;
        session.step = self.global_step;
        Ok(session)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = serde_json::to_vec(self)?;
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = fs::read(path).map_err(|e| Error::io(path, e))?;
        // Version gate before the strict parse so a future format fails
        // with a clear error instead of a field mismatch.
        let probe: serde_json::Value = serde_json::from_slice(&body)?;
        let found = probe
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::CorruptCheckpoint("missing format_version".into()))?;
        if found != u64::from(FORMAT_VERSION) {
            return Err(Error::CheckpointVersion {
                found: found.try_into().unwrap_or(u32::MAX),
                expected: FORMAT_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_slice(&body)?;
        if !ckpt.params.iter().all(|v| v.is_finite()) {
            return Err(Error::CorruptCheckpoint("non-finite parameter value".into()));
        }
        Ok(ckpt)
    }
}
