//! Loss-component and thinking-token ablation grids.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, IoContext, Result};
use crate::evaluator::{evaluate_model, EvalOptions};
use crate::losses::{LossConfig, LossMode, Task};
use crate::model::{Model, ModelConfig};
use crate::trainer::{train, Checkpoint, RunDir, TrainConfig, Trainer};

pub const K_SWEEP: [usize; 4] = [2, 4, 8, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// Loss-component rows.
    Losses,
    /// Thinking-token count rows.
    K,
    All,
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "losses" | "table2" => Ok(Sweep::Losses),
            "k" | "table3" => Ok(Sweep::K),
            "all" => Ok(Sweep::All),
            _ => Err(Error::InvalidConfig(format!("unknown sweep {s:?} (losses, k, all)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub name: String,
    pub k: usize,
    pub disabled: Vec<Task>,
    pub loss_mode: LossMode,
}

impl AblationSpec {
    fn new(name: &str, k: usize, disabled: &[Task], loss_mode: LossMode) -> Self {
        Self { name: name.into(), k, disabled: disabled.to_vec(), loss_mode }
    }

    pub fn slug(&self) -> String {
        self.name.to_lowercase().chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
    }
}

/// The loss-component grid. Every row but "+ Hidden CoT" runs without
/// thinking tokens, so each removal is compared against the baseline.
pub fn loss_rows(k: usize) -> Vec<AblationSpec> {
    let u = LossMode::Uncertainty;
    vec![
        AblationSpec::new("Baseline (All losses)", 0, &[], u),
        AblationSpec::new("+ Hidden CoT", k, &[], u),
        AblationSpec::new("No Detection", 0, &[Task::Detection], u),
        AblationSpec::new("No Depth", 0, &Task::DEPTH, u),
        AblationSpec::new("No Spatial Loss", 0, &[Task::Spatial], u),
        AblationSpec::new("No Multi-view", 0, &[Task::Multiview], u),
        AblationSpec::new("No Feature Distill", 0, &[Task::Feature], u),
        AblationSpec::new("Static Weights", 0, &[], LossMode::Static),
    ]
}

pub fn k_rows() -> Vec<AblationSpec> {
    K_SWEEP.iter().map(|&k| AblationSpec::new(&format!("K={k}"), k, &[], LossMode::Uncertainty)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub k: usize,
    pub loss_mode: LossMode,
    pub disabled: Vec<Task>,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub first_train_loss: f64,
    pub last_train_loss: f64,
    pub rouge_1: f64,
    pub bleu_4: f64,
    pub meteor: f64,
    pub spatial_accuracy: f64,
    pub depth_rmse: f64,
    pub param_count: usize,
    pub wall_clock_secs: f64,
}

/// Shared settings for every row.
#[derive(Debug, Clone)]
pub struct AblationBase {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub eval: EvalOptions,
}

/// Trains and evaluates one row. With `out`, the row's run directory is
/// `out/<slug>` and metrics come from its best checkpoint.
pub fn run_row(base: &AblationBase, data: &Dataset, spec: &AblationSpec, out: Option<&Path>) -> Result<AblationRow> {
    let mc = ModelConfig { k: spec.k, ..base.model.clone() };
    let mut tc = base.train.clone();
    tc.loss_mode = spec.loss_mode;
    tc.enabled_losses.retain(|t| !spec.disabled.contains(t));
    let model = Model::new(mc, tc.seed)?;
    let mut trainer = Trainer::new(model, tc, base.loss.clone())?;
    let run = out.map(|o| RunDir::new(o.join(spec.slug()))).transpose()?;
    let record = train(&mut trainer, data, run.as_ref())?;
    let model = match &run {
        Some(r) if r.best().exists() => Checkpoint::load(&r.best())?.model(),
        _ => trainer.model,
    };
    let (_, val) = data.split();
    let (report, _) = evaluate_model(&model, data, &val, &base.eval)?;
    Ok(AblationRow {
        name: spec.name.clone(),
        k: spec.k,
        loss_mode: spec.loss_mode,
        disabled: spec.disabled.clone(),
        best_val_loss: record.best_val_loss,
        best_epoch: record.best_epoch,
        first_train_loss: record.train_loss.first().copied().unwrap_or(f64::NAN),
        last_train_loss: record.train_loss.last().copied().unwrap_or(f64::NAN),
        rouge_1: report.text.rouge_1.f1,
        bleu_4: report.text.bleu_4,
        meteor: report.text.meteor,
        spatial_accuracy: report.spatial.overall,
        depth_rmse: report.depth.rmse,
        param_count: model.param_count(),
        wall_clock_secs: record.wall_clock_secs,
    })
}

pub fn ablate(base: &AblationBase, data: &Dataset, specs: &[AblationSpec], out: Option<&Path>) -> Result<Vec<AblationRow>> {
    specs
        .iter()
        .map(|s| {
            log::info!("ablation row {}", s.name);
            run_row(base, data, s, out)
        })
        .collect()
}

pub fn to_markdown(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "| Configuration | K | Best Val Loss | Best Epoch | ROUGE-1 | BLEU-4 | METEOR | Spatial Acc. | Depth RMSE | Params |\n\
         |---|---|---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {:.4} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {} |",
            r.name,
            r.k,
            r.best_val_loss,
            r.best_epoch,
            r.rouge_1,
            r.bleu_4,
            r.meteor,
            r.spatial_accuracy,
            r.depth_rmse,
            r.param_count
        );
    }
    s
}

/// Writes `<stem>.json` and `<stem>.md` under `dir`.
pub fn write_table(dir: &Path, stem: &str, rows: &[AblationRow]) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let json = dir.join(format!("{stem}.json"));
    fs::write(&json, serde_json::to_string_pretty(rows)?).at(&json)?;
    let md = dir.join(format!("{stem}.md"));
    fs::write(&md, to_markdown(rows)).at(&md)?;
    Ok(())
}
