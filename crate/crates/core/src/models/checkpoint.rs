//! JSON model checkpoints. Floats are written in shortest round-trip form,
//! so a reloaded model reproduces predictions bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainedModel;
use crate::error::{Error, Result};
use crate::series::StandardizationParams;

pub const CHECKPOINT_FORMAT: &str = "drumlevel-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub model: TrainedModel,
    pub standardization: StandardizationParams,
}

impl Checkpoint {
    pub fn new(model: TrainedModel, standardization: StandardizationParams) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            seed: model.config.seed,
            model,
            standardization,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        if let Some(p) = &ck.model.params {
            p.check_shapes(&ck.model.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
            if !p.is_finite() {
                return Err(Error::Checkpoint("non-finite parameter".into()));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
