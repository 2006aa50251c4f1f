//! Versioned JSON checkpoint: configuration, base weights, adapters,
//! selector parameters and the tokenizer vocabulary.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BaseWeights, MicroLm, ModelConfig};
use crate::scalar::Scalar;
use crate::tokenizer::Tokenizer;
use crate::trainer::{TrainConfig, Trainable};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint<T> {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub base: BaseWeights<T>,
    pub trainable: Trainable<T>,
    pub tokenizer: Tokenizer,
}

impl<T: Scalar + Serialize + DeserializeOwned> Checkpoint<T> {
    pub fn new(model: &MicroLm<T>, train: &TrainConfig, trainable: &Trainable<T>, tokenizer: &Tokenizer) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            model: model.config().clone(),
            train: train.clone(),
            base: model.weights().clone(),
            trainable: trainable.clone(),
            tokenizer: tokenizer.clone(),
        }
    }

    /// Writes to a sibling temp file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ck: Self = serde_json::from_str(&text)?;
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint schema version {}", ck.schema_version)));
        }
        if ck.tokenizer.vocab_size() != ck.model.vocab_size {
            return Err(Error::Parse("checkpoint tokenizer and model vocab sizes differ".into()));
        }
        Ok(ck)
    }

    pub fn into_parts(self) -> (MicroLm<T>, Trainable<T>, Tokenizer) {
        (MicroLm::from_parts(self.model, self.base), self.trainable, self.tokenizer)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
