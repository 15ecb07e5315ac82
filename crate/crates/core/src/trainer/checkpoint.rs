use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{AdamW, TrainConfig};
use crate::container::{Precision, TensorFile};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, Task};
use crate::model::{init_params, Model, ModelConfig, ParamStore};

const FORMAT: &str = "hcot-checkpoint-1";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: usize,
    pub epoch: usize,
    /// Validation loss after the most recent epoch.
    pub val_loss: f64,
    pub best_val_loss: f64,
    pub log_sigma: BTreeMap<Task, f64>,
}

/// Config, parameters and training state. Stored as a tensor container with
/// `f64` payloads and JSON records in the header metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub loss_config: LossConfig,
    pub state: TrainState,
    pub params: ParamStore,
    pub adam: Option<AdamW>,
}

fn meta<T: for<'de> Deserialize<'de>>(file: &TensorFile, key: &str) -> Result<T> {
    let text = file.metadata.get(key).ok_or_else(|| Error::Container(format!("checkpoint metadata lacks {key:?}")))?;
    Ok(serde_json::from_str(text)?)
}

impl Checkpoint {
    pub fn model(&self) -> Model {
        Model { config: self.model_config.clone(), params: self.params.clone() }
    }

    pub fn to_file(&self) -> Result<TensorFile> {
        let mut f = TensorFile::new();
        f.metadata.insert("format".into(), FORMAT.into());
        f.metadata.insert("model_config".into(), serde_json::to_string(&self.model_config)?);
        f.metadata.insert("train_config".into(), serde_json::to_string(&self.train_config)?);
        f.metadata.insert("loss_config".into(), serde_json::to_string(&self.loss_config)?);
        f.metadata.insert("state".into(), serde_json::to_string(&self.state)?);
        self.params.write_into(&mut f, "param.");
        for (t, s) in &self.state.log_sigma {
            f.insert2(format!("log_sigma.{t}"), &Array2::from_elem((1, 1), *s));
        }
        if let Some(opt) = &self.adam {
            f.metadata.insert("adam_t".into(), opt.t.to_string());
            let names: Vec<String> = self
                .params
                .iter()
                .map(|(n, _)| n.to_string())
                .chain(self.state.log_sigma.keys().map(|t| format!("log_sigma.{t}")))
                .collect();
            for (i, name) in names.iter().enumerate() {
                f.insert2(format!("adam_m.{name}"), &opt.m[i]);
                f.insert2(format!("adam_v.{name}"), &opt.v[i]);
            }
        }
        Ok(f)
    }

    pub fn from_file(f: &TensorFile) -> Result<Self> {
        let format: String = f.metadata.get("format").cloned().unwrap_or_default();
        if format != FORMAT {
            return Err(Error::Container(format!("not a checkpoint (format {format:?})")));
        }
        let model_config: ModelConfig = meta(f, "model_config")?;
        let train_config: TrainConfig = meta(f, "train_config")?;
        let loss_config: LossConfig = meta(f, "loss_config")?;
        let mut state: TrainState = meta(f, "state")?;
        let mut params = init_params(&model_config, 0)?;
        params.read_from(f, "param.")?;
        for (t, s) in state.log_sigma.iter_mut() {
            *s = f.get2(&format!("log_sigma.{t}"))?[[0, 0]];
        }
        let adam = match f.metadata.get("adam_t") {
            None => None,
            Some(t) => {
                let t: u64 = t.parse().map_err(|_| Error::Container(format!("bad adam_t {t:?}")))?;
                let names: Vec<String> = params
                    .iter()
                    .map(|(n, _)| n.to_string())
                    .chain(state.log_sigma.keys().map(|t| format!("log_sigma.{t}")))
                    .collect();
                let mut m = Vec::with_capacity(names.len());
                let mut v = Vec::with_capacity(names.len());
                for name in &names {
                    m.push(f.get2(&format!("adam_m.{name}"))?);
                    v.push(f.get2(&format!("adam_v.{name}"))?);
                }
                Some(AdamW { m, v, t })
            }
        };
        Ok(Self { model_config, train_config, loss_config, state, params, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_file()?.write(path, Precision::F64)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(&TensorFile::read(path)?)
    }

    /// Serialized size of the parameters alone, in bytes.
    pub fn param_bytes(params: &ParamStore) -> Result<usize> {
        let mut f = TensorFile::new();
        params.write_into(&mut f, "param.");
        Ok(f.to_bytes(Precision::F64)?.len())
    }
}
