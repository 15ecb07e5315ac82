//! The merged run configuration file (TOML). Every field has a default and
//! unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result};
use crate::evaluator::EvalOptions;
use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::scene::DatasetConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub max_new_tokens: usize,
    /// Generation runs timed for the efficiency record; 0 skips it.
    pub efficiency_runs: usize,
    /// Parameter count the compression ratio is measured against; 0 means
    /// the evaluated model itself.
    pub reference_params: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { max_new_tokens: 24, efficiency_runs: 20, reference_params: 0 }
    }
}

impl EvalConfig {
    pub fn options(&self, seed: u64, param_count: usize) -> EvalOptions {
        EvalOptions {
            max_new_tokens: self.max_new_tokens,
            seed,
            efficiency_runs: self.efficiency_runs,
            reference_params: if self.reference_params == 0 { param_count } else { self.reference_params },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parsed config plus the file text, for echoing into a run directory.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = fs::read_to_string(path).at(path)?;
        Ok((Self::from_toml(&text)?, text))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        self.loss.validate()
    }

    /// Model config with every data-dependent field filled in.
    pub fn model_for(&self, data: &DatasetConfig, vocab_size: usize) -> ModelConfig {
        self.model.clone().fit_to_data(data, vocab_size)
    }

    /// Loss config with depth binning taken from the data.
    pub fn loss_for(&self, data: &DatasetConfig) -> LossConfig {
        LossConfig { depth_bins: data.depth_bins, ..self.loss.clone() }
    }

    /// Train config with the run seed applied.
    pub fn train_for(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }
}
