//! Top-level run configuration: every module's settings in one TOML file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::Strategy;
use crate::dataset::PathConfig;
use crate::error::{Error, Result};
use crate::eval::SplitSpec;
use crate::model::ModelConfig;
use crate::prompt::Task;
use crate::synth::WorldConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub path_counts: Vec<usize>,
    /// Paths per sample in the ordering-bias runs (2 or 3).
    pub bias_path_count: usize,
    pub strategies: Vec<Strategy>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { path_counts: vec![0, 1, 2, 3], bias_path_count: 2, strategies: Strategy::ALL.to_vec() }
    }
}

/// `model.vocab_size` caps the fitted vocabulary; the model itself is
/// sized to the tokenizer actually fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: Task,
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: PathConfig,
    pub split: SplitSpec,
    pub ablation: AblationConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.paths.validate()?;
        self.split.validate()?;
        if self.model.vocab_size < crate::tokenizer::RESERVED.len() {
            return Err(Error::InvalidConfig("model.vocab_size is smaller than the reserved tokens".into()));
        }
        if !(2..=3).contains(&self.ablation.bias_path_count) {
            return Err(Error::InvalidConfig(format!(
                "ablation.bias_path_count must be 2 or 3, got {}",
                self.ablation.bias_path_count
            )));
        }
        Ok(())
    }

    /// Sets every component seed at once.
    pub fn set_seed(&mut self, seed: u64) {
        self.world.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.paths.seed = seed;
        self.split.seed = seed;
    }
}
