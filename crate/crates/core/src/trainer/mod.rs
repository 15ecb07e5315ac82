//! AdamW with warmup and cosine decay over the multi-task objective, with
//! per-epoch validation, best/last checkpoints and a per-step loss log.

mod checkpoint;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::dataset::Dataset;
use crate::error::{Error, IoContext, Result};
use crate::losses::objective::{evaluate, prepare, Prepared, Weighting};
use crate::losses::{effective_weight, LossBundle, LossConfig, LossMode, Task};
use crate::model::Model;

pub use checkpoint::{Checkpoint, TrainState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Explicit warmup length; when absent, `warmup_fraction` of all steps.
    pub warmup_steps: Option<usize>,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub enabled_losses: BTreeSet<Task>,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 5,
            warmup_steps: None,
            warmup_fraction: 0.05,
            batch_size: 8,
            seed: 0,
            loss_mode: LossMode::Uncertainty,
            enabled_losses: Task::ALL.into_iter().collect(),
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            patience: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.enabled_losses.is_empty() {
            return bad("at least one loss must be enabled");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn warmup_for(&self, total_steps: usize) -> usize {
        self.warmup_steps.unwrap_or_else(|| (self.warmup_fraction * total_steps as f64).round() as usize).min(total_steps)
    }
}

/// Linear warmup from 0 to `base_lr`, then half-cosine down to 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, base_lr: f64) -> f64 {
    if step < warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    if total_steps <= warmup_steps {
        return base_lr;
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
    pub t: u64,
}

impl AdamW {
    pub fn new(shapes: impl Iterator<Item = (usize, usize)>) -> Self {
        let m: Vec<Mat> = shapes.map(Array2::zeros).collect();
        Self { v: m.clone(), m, t: 0 }
    }

    /// One update of every parameter. `decay[i]` selects decoupled weight decay.
    pub fn step(&mut self, params: &mut [&mut Mat], grads: &[Mat], decay: &[bool], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            let wd = if decay[i] { cfg.weight_decay } else { 0.0 };
            ndarray::Zip::from(&mut **p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + cfg.adam_eps);
                *p -= lr * (update + wd * *p);
            });
        }
    }
}

/// One record of the per-step loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub losses: LossBundle,
    /// `1/(2σ²)` per task, or the static weights.
    pub weights: BTreeMap<Task, f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Per-epoch mean of each task loss on the training set.
    pub train_bundles: Vec<LossBundle>,
    /// 1-based epoch with the lowest validation loss.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub steps: usize,
    pub weight_trajectories: BTreeMap<Task, Vec<f64>>,
    pub stopped_early: bool,
    pub wall_clock_secs: f64,
}

/// Mutable training state: model, `log σ`, optimizer.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub log_sigma: BTreeMap<Task, f64>,
    pub opt: AdamW,
    pub state: TrainState,
}

fn decays(model: &Model) -> Vec<bool> {
    model
        .params
        .iter()
        .map(|(name, v)| v.nrows() > 1 && !name.ends_with(".b") && !name.contains("ln") && name != "pos_emb")
        .collect()
}

impl Trainer {
    pub fn new(model: Model, train: TrainConfig, loss: LossConfig) -> Result<Self> {
        train.validate()?;
        loss.validate()?;
        let log_sigma: BTreeMap<Task, f64> = train.enabled_losses.iter().map(|&t| (t, 0.0)).collect();
        let shapes: Vec<(usize, usize)> =
            model.params.iter().map(|(_, v)| v.dim()).chain(log_sigma.keys().map(|_| (1, 1))).collect();
        let opt = AdamW::new(shapes.into_iter());
        Ok(Self { model, train, loss, log_sigma, opt, state: TrainState::default() })
    }

    /// Current effective weight of each enabled task.
    pub fn weights(&self) -> BTreeMap<Task, f64> {
        match self.train.loss_mode {
            LossMode::Uncertainty => self.log_sigma.iter().map(|(&t, &s)| (t, effective_weight(s))).collect(),
            LossMode::Static => {
                self.train.enabled_losses.iter().map(|&t| (t, self.loss.static_weight(t))).collect()
            }
        }
    }

    /// Mean weighted total and mean bundle over `samples`, without gradients.
    pub fn validate(&self, samples: &[Prepared]) -> Result<(f64, LossBundle)> {
        let weights = self.weights();
        let weighting = self.weighting_with(&weights);
        let evals: Vec<_> = samples
            .par_iter()
            .map(|p| evaluate(&self.model, p, &self.loss, &self.train.enabled_losses, &weighting, false))
            .collect::<Result<_>>()?;
        let n = evals.len().max(1) as f64;
        let mut bundle = LossBundle::default();
        let mut total = 0.0;
        for e in &evals {
            bundle.add_scaled(&e.bundle, 1.0 / n);
            total += e.total / n;
        }
        Ok((total, bundle))
    }

    fn weighting_with<'a>(&'a self, static_weights: &'a BTreeMap<Task, f64>) -> Weighting<'a> {
        match self.train.loss_mode {
            LossMode::Uncertainty => Weighting::Uncertainty { log_sigma: &self.log_sigma, id_base: self.model.params.len() },
            LossMode::Static => Weighting::Static(static_weights),
        }
    }

    /// One optimizer step on `batch`; returns the batch-mean bundle and total.
    pub fn step(&mut self, batch: &[&Prepared], lr: f64) -> Result<(LossBundle, f64)> {
        let weights = self.weights();
        let n_params = self.model.params.len();
        let (bundle, total, grads) = {
            let weighting = self.weighting_with(&weights);
            let model = &self.model;
            let evals: Vec<_> = batch
                .par_iter()
                .map(|p| evaluate(model, p, &self.loss, &self.train.enabled_losses, &weighting, true))
                .collect::<Result<_>>()?;
            let n = evals.len() as f64;
            let mut grads: Vec<Mat> = self.opt.m.iter().map(|m| Array2::zeros(m.dim())).collect();
            let mut bundle = LossBundle::default();
            let mut total = 0.0;
            let tasks: Vec<Task> = self.log_sigma.keys().copied().collect();
            for e in &evals {
                bundle.add_scaled(&e.bundle, 1.0 / n);
                total += e.total / n;
                let g = e.grads.as_ref().expect("gradients requested");
                for (id, gm) in g.params() {
                    let slot = if id < n_params {
                        id
                    } else {
                        let t = Task::ALL[id - n_params];
                        n_params + tasks.iter().position(|&x| x == t).expect("enabled task")
                    };
                    grads[slot].scaled_add(1.0 / n, gm);
                }
            }
            (bundle, total, grads)
        };
        if !total.is_finite() || !bundle.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.state.step, bundle: bundle.to_string() });
        }
        let mut grads = grads;
        if self.train.grad_clip > 0.0 {
            let norm = grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
            if norm > self.train.grad_clip {
                let k = self.train.grad_clip / norm;
                grads.iter_mut().for_each(|g| g.mapv_inplace(|x| x * k));
            }
        }
        let mut decay = decays(&self.model);
        decay.resize(grads.len(), false);
        let mut sigma_vals: Vec<Mat> = self.log_sigma.values().map(|&s| Array2::from_elem((1, 1), s)).collect();
        let mut refs: Vec<&mut Mat> = self.model.params.values_mut().collect();
        refs.extend(sigma_vals.iter_mut());
        self.opt.step(&mut refs, &grads, &decay, lr, &self.train);
        if self.train.loss_mode == LossMode::Uncertainty {
            for (s, v) in self.log_sigma.values_mut().zip(&sigma_vals) {
                *s = v[[0, 0]];
            }
        }
        self.state.step += 1;
        Ok((bundle, total))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model_config: self.model.config.clone(),
            train_config: self.train.clone(),
            loss_config: self.loss.clone(),
            state: TrainState { log_sigma: self.log_sigma.clone(), ..self.state.clone() },
            params: self.model.params.clone(),
            adam: Some(self.opt.clone()),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let mut t = Self::new(Model { config: ck.model_config, params: ck.params }, ck.train_config, ck.loss_config)?;
        t.log_sigma = ck.state.log_sigma.clone();
        if let Some(opt) = ck.adam {
            t.opt = opt;
        }
        t.state = ck.state;
        Ok(t)
    }
}

/// Model inputs for every sample, in sample order.
pub fn prepare_all(model: &Model, data: &Dataset) -> Result<Vec<Prepared>> {
    data.samples.par_iter().map(|s| prepare(&model.config, data, s)).collect()
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("checkpoints")).at(&root)?;
        Ok(Self { root })
    }

    pub fn best(&self) -> PathBuf {
        self.root.join("checkpoints").join("best.safetensors")
    }

    pub fn last(&self) -> PathBuf {
        self.root.join("checkpoints").join("last.safetensors")
    }

    pub fn loss_log(&self) -> PathBuf {
        self.root.join("loss_log.jsonl")
    }

    pub fn record(&self) -> PathBuf {
        self.root.join("run_record.json")
    }
}

/// Trains on the 80% scene split and validates on the rest after each epoch.
pub fn train(trainer: &mut Trainer, data: &Dataset, run: Option<&RunDir>) -> Result<RunRecord> {
    let started = Instant::now();
    let prepared = prepare_all(&trainer.model, data)?;
    let (train_idx, val_idx) = data.split();
    let val: Vec<Prepared> = val_idx.iter().map(|&i| prepared[i].clone()).collect();
    let cfg = trainer.train.clone();
    let batches_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let warmup = cfg.warmup_for(total_steps);

    let mut log = match run {
        Some(r) => Some(BufWriter::new(fs::File::create(r.loss_log()).at(r.loss_log())?)),
        None => None,
    };
    let mut record = RunRecord {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        train_bundles: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        steps: 0,
        weight_trajectories: cfg.enabled_losses.iter().map(|&t| (t, Vec::new())).collect(),
        stopped_early: false,
        wall_clock_secs: 0.0,
    };
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        let mut epoch_total = 0.0;
        let mut epoch_bundle = LossBundle::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &prepared[i]).collect();
            let step = trainer.state.step;
            let lr = lr_at(step, total_steps, warmup, cfg.learning_rate);
            let weights = trainer.weights();
            let (bundle, total) = trainer.step(&batch, lr)?;
            epoch_total += total / batches_per_epoch as f64;
            epoch_bundle.add_scaled(&bundle, 1.0 / batches_per_epoch as f64);
            for (t, w) in &weights {
                record.weight_trajectories.get_mut(t).expect("enabled task").push(*w);
            }
            if let Some(w) = log.as_mut() {
                let entry = StepLog { step, epoch, lr, losses: bundle, weights, total };
                serde_json::to_writer(&mut *w, &entry)?;
                writeln!(w).at(run.expect("log implies run").loss_log())?;
            }
        }
        trainer.state.epoch = epoch;
        let (val_loss, _) = trainer.validate(&val)?;
        log::info!("epoch {epoch}: train {epoch_total:.5} val {val_loss:.5}");
        record.train_loss.push(epoch_total);
        record.val_loss.push(val_loss);
        record.train_bundles.push(epoch_bundle);
        trainer.state.val_loss = val_loss;
        if val_loss < record.best_val_loss {
            record.best_val_loss = val_loss;
            record.best_epoch = epoch;
            trainer.state.best_val_loss = val_loss;
            since_best = 0;
            if let Some(r) = run {
                trainer.checkpoint().save(&r.best())?;
            }
        } else {
            since_best += 1;
        }
        if let Some(r) = run {
            trainer.checkpoint().save(&r.last())?;
        }
        if since_best >= cfg.patience && epoch < cfg.epochs {
            record.stopped_early = true;
            break;
        }
    }
    if let Some(w) = log.as_mut() {
        w.flush().at(run.expect("log implies run").loss_log())?;
    }
    record.steps = trainer.state.step;
    record.wall_clock_secs = started.elapsed().as_secs_f64();
    if let Some(r) = run {
        let text = serde_json::to_string_pretty(&record)?;
        fs::write(r.record(), text).at(r.record())?;
    }
    Ok(record)
}
