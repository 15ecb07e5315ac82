use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scene infeasible: could not place object {object} after {attempts} attempts")]
    SceneInfeasible { object: usize, attempts: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("vocabulary is missing template word {0:?}")]
    MissingVocabWord(String),

    #[error("sequence of length {total} exceeds max_seq_len {max}; refusing to truncate the answer")]
    SequenceTooLong { total: usize, max: usize },

    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { context: String, expected: Vec<usize>, actual: Vec<usize> },

    #[error("non-finite activation at layer {layer}")]
    NonFinite { layer: usize },

    #[error("distribution in {context} is not normalized (row {row} sums to {sum})")]
    Unnormalized { context: String, row: usize, sum: f64 },

    #[error("no entry for task {0:?}")]
    MissingTask(String),

    #[error("non-finite total loss at step {step}: {bundle}")]
    NonFiniteLoss { step: usize, bundle: String },

    #[error("missing array {0:?} in container")]
    MissingArray(String),

    #[error("incompatible checkpoint and data: checkpoint {checkpoint}, data {data}")]
    Incompatible { checkpoint: String, data: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("container error: {0}")]
    Container(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io { path: path.into(), source })
    }
}
