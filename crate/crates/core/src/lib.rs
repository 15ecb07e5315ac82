//! Synthetic 3D scenes, a compact student model with learnable thinking
//! tokens, the multi-task distillation objective, training, evaluation and
//! ablation grids.

pub mod ablation;
pub mod autodiff;
pub mod config;
pub mod container;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod losses;
pub mod model;
pub mod scene;
pub mod sequence;
pub mod trainer;
pub mod tokenizer;

pub use config::{EvalConfig, RunConfig};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use evaluator::{MetricsReport, QualitativeRow};
pub use losses::{LossConfig, LossMode, Task};
pub use model::{Model, ModelConfig, VisionInput};
pub use scene::{DatasetConfig, Relation};
pub use sequence::TokenSequence;
pub use trainer::{Checkpoint, RunRecord, TrainConfig};
