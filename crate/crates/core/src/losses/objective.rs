//! Training objective on the autodiff graph: per-sample targets, per-task
//! loss nodes, and the weighted total.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{concatenate, Array2, Axis};

use super::{clamp_depth, depth_bin, CrossView, LossBundle, LossConfig, Task};
use crate::autodiff::{log_softmax_rows, Gradients, Graph, Mat, Var};
use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::model::{argmax, ForwardVars, Model, ModelConfig, VisionInput};
use crate::scene::SceneSignal;
use crate::sequence::TokenSequence;

/// Everything the objective compares student outputs against, for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    /// `|A| x vocab` logarithms of the teacher soft targets.
    pub teacher_logits: Mat,
    pub answer_ids: Vec<u32>,
    /// Per view `cells x channels`.
    pub spatial: Vec<Mat>,
    /// `(views·pixels) x 1`, clamped to `[0, d_max]`.
    pub gt_depth: Mat,
    /// `(views·pixels) x B` one-hot of the ground-truth bin.
    pub depth_onehot: Mat,
    /// `(views·pixels) x B` teacher bin distribution.
    pub depth_dist: Mat,
    /// `1 x B`
    pub pooled_depth: Mat,
    /// Teacher class per occupied detection slot.
    pub det_targets: Vec<usize>,
    /// `objects x categories`, slot order.
    pub det_class_probs: Mat,
    /// `objects x 6` center and extent divided by the room size, slot order.
    pub det_boxes: Mat,
    /// Relation slot index of each teacher object pair.
    pub pair_slots: Vec<usize>,
    pub rel_lr: Mat,
    pub rel_ab: Mat,
}

/// Index of slot pair `(a, b)`, `a < b`, in row-major upper-triangle order.
pub fn pair_index(a: usize, b: usize, slots: usize) -> usize {
    debug_assert!(a < b && b < slots);
    a * slots - a * (a + 1) / 2 + (b - a - 1)
}

impl Targets {
    /// Objects are assigned to detection slots in category order; pairs
    /// follow their slots, flipping the relation when the order swaps.
    pub fn build(
        cfg: &ModelConfig,
        signal: &SceneSignal,
        gt_depth: &[Mat],
        room_size: [f64; 3],
        soft_targets: &Mat,
        answer_ids: &[u32],
    ) -> Result<Self> {
        let b = cfg.depth_bins;
        if signal.pooled_depth_bins.ncols() != b {
            return Err(Error::Incompatible {
                checkpoint: format!("{b} depth bins"),
                data: format!("{} depth bins", signal.pooled_depth_bins.ncols()),
            });
        }
        if soft_targets.ncols() != cfg.vocab_size {
            return Err(Error::Incompatible {
                checkpoint: format!("vocab {}", cfg.vocab_size),
                data: format!("vocab {}", soft_targets.ncols()),
            });
        }
        let n = signal.det_class_probs.nrows();
        if n > cfg.max_objects {
            return Err(Error::Incompatible {
                checkpoint: format!("{} detection slots", cfg.max_objects),
                data: format!("{n} objects"),
            });
        }
        let classes: Vec<usize> = signal.det_class_probs.outer_iter().map(|r| argmax(r.iter().copied())).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (classes[i], i));
        let mut slot_of = vec![0; n];
        for (s, &i) in order.iter().enumerate() {
            slot_of[i] = s;
        }
        let det_class_probs = signal.det_class_probs.select(Axis(0), &order);
        let mut det_boxes = signal.det_boxes.select(Axis(0), &order);
        for mut row in det_boxes.outer_iter_mut() {
            for k in 0..6 {
                row[k] /= room_size[k % 3];
            }
        }
        let det_targets = order.iter().map(|&i| classes[i]).collect();

        let mut pair_slots = Vec::new();
        let mut rel_lr = Array2::zeros((signal.rel_lr.nrows(), 2));
        let mut rel_ab = Array2::zeros((signal.rel_ab.nrows(), 2));
        let mut p = 0;
        for i in 0..n {
            for j in i + 1..n {
                let (si, sj) = (slot_of[i], slot_of[j]);
                let (lo, hi, flip) = if si < sj { (si, sj, false) } else { (sj, si, true) };
                pair_slots.push(pair_index(lo, hi, cfg.max_objects));
                for (dst, src) in [(&mut rel_lr, &signal.rel_lr), (&mut rel_ab, &signal.rel_ab)] {
                    let (x, y) = (src[[p, 0]], src[[p, 1]]);
                    let (x, y) = if flip { (y, x) } else { (x, y) };
                    dst[[p, 0]] = x;
                    dst[[p, 1]] = y;
                }
                p += 1;
            }
        }

        let d_max = cfg.d_max;
        let depth_cols: Vec<Mat> = gt_depth
            .iter()
            .map(|d| clamp_depth(d, d_max).into_shape_with_order((d.len(), 1)).expect("column"))
            .collect();
        let gt_depth =
            concatenate(Axis(0), &depth_cols.iter().map(|m| m.view()).collect::<Vec<_>>()).expect("depth rows");
        let mut depth_onehot = Array2::zeros((gt_depth.nrows(), b));
        for (i, &d) in gt_depth.iter().enumerate() {
            depth_onehot[[i, depth_bin(d, b, d_max)]] = 1.0;
        }
        let depth_dist = concatenate(Axis(0), &signal.depth_bin_dist.iter().map(|m| m.view()).collect::<Vec<_>>())
            .expect("depth distributions");
        if depth_dist.dim() != depth_onehot.dim() {
            return Err(Error::ShapeMismatch {
                context: "teacher depth distribution".into(),
                expected: vec![depth_onehot.nrows(), b],
                actual: vec![depth_dist.nrows(), depth_dist.ncols()],
            });
        }

        Ok(Self {
            teacher_logits: soft_targets.mapv(f64::ln),
            answer_ids: answer_ids.to_vec(),
            spatial: signal.spatial_features.clone(),
            gt_depth,
            depth_onehot,
            depth_dist,
            pooled_depth: signal.pooled_depth_bins.clone(),
            det_targets,
            det_class_probs,
            det_boxes,
            pair_slots,
            rel_lr,
            rel_ab,
        })
    }
}

/// Model inputs and targets for one dataset sample.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub sample_id: usize,
    pub seq: TokenSequence,
    pub vision: VisionInput,
    pub targets: Targets,
}

pub fn prepare(cfg: &ModelConfig, data: &Dataset, sample: &Sample) -> Result<Prepared> {
    let scene = &data.scenes[sample.scene_index];
    let seq = crate::sequence::build_sequence(
        cfg.k,
        &sample.question_ids,
        &sample.answer_ids,
        cfg.max_seq_len,
        cfg.layout,
    )?;
    let vision = VisionInput::from_views(cfg, &scene.views)?;
    let depth: Vec<Mat> = scene.views.iter().map(|v| v.depth.clone()).collect();
    let targets =
        Targets::build(cfg, &scene.signal, &depth, scene.scene.room.extent(), &sample.soft_targets, &sample.answer_ids)?;
    Ok(Prepared { sample_id: sample.id, seq, vision, targets })
}

fn mean_sq_diff(g: &mut Graph<'_>, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let sq = g.square(d);
    g.mean(sq)
}

fn cosine(g: &mut Graph<'_>, a: Var, b: Var) -> Var {
    let ab = g.mul(a, b);
    let dot = g.sum(ab);
    let aa = g.square(a);
    let na = g.sum(aa);
    let bb = g.square(b);
    let nb = g.sum(bb);
    let den = g.mul(na, nb);
    let den = g.add_scalar(den, 1e-24);
    let den = g.sqrt(den);
    g.div(dot, den)
}

/// Loss nodes for every enabled task.
pub fn loss_vars(
    g: &mut Graph<'_>,
    fwd: &ForwardVars,
    seq: &TokenSequence,
    t: &Targets,
    cfg: &LossConfig,
    enabled: &BTreeSet<Task>,
) -> Result<BTreeMap<Task, Var>> {
    let h = &fwd.heads;
    let mut out = BTreeMap::new();

    if enabled.contains(&Task::Text) {
        let rows = seq.answer_logit_rows();
        let n_a = rows.len();
        if t.teacher_logits.nrows() != n_a {
            return Err(Error::ShapeMismatch {
                context: "text distillation positions".into(),
                expected: vec![t.teacher_logits.nrows()],
                actual: vec![n_a],
            });
        }
        let tau = cfg.temperature;
        let logits = g.slice_rows(fwd.lm_logits, rows.start, rows.end);
        let scaled = g.scale(logits, 1.0 / tau);
        let ls = g.log_softmax(scaled);
        let teacher = log_softmax_rows((&t.teacher_logits / tau).view());
        let kl = g.kl_to_log_target(ls, &teacher);
        let mut loss = g.scale(kl, tau * tau / n_a.max(1) as f64);
        if cfg.hard_label_mix > 0.0 {
            let lp = g.log_softmax(logits);
            let mut onehot = Array2::zeros((n_a, t.teacher_logits.ncols()));
            for (r, &id) in t.answer_ids.iter().enumerate() {
                onehot[[r, id as usize]] = 1.0;
            }
            let ce = g.kl_to(lp, &onehot);
            let ce = g.scale(ce, cfg.hard_label_mix / n_a.max(1) as f64);
            let soft = g.scale(loss, 1.0 - cfg.hard_label_mix);
            loss = g.add(soft, ce);
        }
        out.insert(Task::Text, loss);
    }

    let n_px = t.gt_depth.nrows() as f64;
    if enabled.contains(&Task::DepthReg) {
        let pred = g.concat_rows(&h.depth_scalar);
        let gt = g.constant(t.gt_depth.clone());
        let d = g.sub(pred, gt);
        let a = g.abs(d);
        out.insert(Task::DepthReg, g.mean(a));
    }
    if enabled.contains(&Task::DepthCe) || enabled.contains(&Task::DepthKl) {
        let logp = g.concat_rows(&h.depth_logp);
        if enabled.contains(&Task::DepthCe) {
            let ce = g.kl_to(logp, &t.depth_onehot);
            out.insert(Task::DepthCe, g.scale(ce, 1.0 / n_px));
        }
        if enabled.contains(&Task::DepthKl) {
            let kl = g.kl_to(logp, &t.depth_dist);
            out.insert(Task::DepthKl, g.scale(kl, 1.0 / n_px));
        }
    }

    let n_obj = t.det_targets.len();
    if enabled.contains(&Task::Detection) {
        let loss = if n_obj == 0 {
            g.scalar_constant(0.0)
        } else {
            let probs = g.slice_rows(h.det_probs, 0, n_obj);
            let focal = g.focal(probs, &t.det_targets, cfg.focal_alpha, cfg.focal_gamma);
            let focal = g.scale(focal, 1.0 / n_obj as f64);
            let boxes = g.slice_rows(h.det_boxes, 0, n_obj);
            let gt = g.constant(t.det_boxes.clone());
            let d = g.sub(boxes, gt);
            let a = g.abs(d);
            let loc = g.mean(a);
            g.add(focal, loc)
        };
        out.insert(Task::Detection, loss);
    }

    if enabled.contains(&Task::Spatial) {
        if h.spatial.len() != t.spatial.len() {
            return Err(Error::ShapeMismatch {
                context: "spatial views".into(),
                expected: vec![t.spatial.len()],
                actual: vec![h.spatial.len()],
            });
        }
        let mut terms = Vec::new();
        for (&s, ft) in h.spatial.iter().zip(&t.spatial) {
            if g.shape(s) != ft.dim() {
                return Err(Error::ShapeMismatch {
                    context: "spatial features".into(),
                    expected: vec![ft.nrows(), ft.ncols()],
                    actual: vec![g.shape(s).0, g.shape(s).1],
                });
            }
            let c = g.constant(ft.clone());
            let d = g.sub(s, c);
            let sq = g.square(d);
            terms.push(g.sum(sq));
        }
        let pooled: Vec<Var> = h.spatial.iter().map(|&s| g.mean_rows(s)).collect();
        for i in 0..pooled.len() {
            for j in 0..pooled.len() {
                if i != j && cfg.lambda_cross > 0.0 {
                    let d = match cfg.cross_view {
                        CrossView::Distance => mean_sq_diff(g, pooled[i], pooled[j]),
                        CrossView::Cosine => cosine(g, pooled[i], pooled[j]),
                    };
                    terms.push(g.scale(d, cfg.lambda_cross));
                }
            }
        }
        let all = g.concat_rows(&terms);
        out.insert(Task::Spatial, g.sum(all));
    }

    if enabled.contains(&Task::Multiview) {
        let v = &h.det_probs_view;
        let mut terms = Vec::new();
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                terms.push(mean_sq_diff(g, v[i], v[j]));
            }
        }
        let loss = if terms.is_empty() {
            g.scalar_constant(0.0)
        } else {
            let n = terms.len() as f64;
            let all = g.concat_rows(&terms);
            let s = g.sum(all);
            g.scale(s, 1.0 / n)
        };
        out.insert(Task::Multiview, loss);
    }

    if enabled.contains(&Task::Feature) {
        let mut terms = Vec::new();
        if n_obj > 0 {
            let lp = g.slice_rows(h.det_logp, 0, n_obj);
            let kl = g.kl_to(lp, &t.det_class_probs);
            terms.push(g.scale(kl, 1.0 / n_obj as f64));
        }
        if !t.pair_slots.is_empty() {
            let np = t.pair_slots.len() as f64;
            for (logp, target) in [(h.rel_lr_logp, &t.rel_lr), (h.rel_ab_logp, &t.rel_ab)] {
                let rows = g.gather(logp, &t.pair_slots);
                let kl = g.kl_to(rows, target);
                terms.push(g.scale(kl, 1.0 / np));
            }
        }
        let ld = g.ln(h.pooled_depth);
        terms.push(g.kl_to(ld, &t.pooled_depth));
        let all = g.concat_rows(&terms);
        out.insert(Task::Feature, g.sum(all));
    }
    Ok(out)
}

/// How task losses combine into the scalar that is differentiated.
#[derive(Debug, Clone)]
pub enum Weighting<'a> {
    /// `Σ exp(−2s)/2 · L + s`. `log σ` nodes are registered as parameters
    /// with id `id_base + position in Task::ALL`.
    Uncertainty { log_sigma: &'a BTreeMap<Task, f64>, id_base: usize },
    /// `Σ w L`
    Static(&'a BTreeMap<Task, f64>),
}

pub fn log_sigma_id(id_base: usize, t: Task) -> usize {
    id_base + Task::ALL.iter().position(|&x| x == t).expect("task in ALL")
}

pub fn total_var(g: &mut Graph<'_>, losses: &BTreeMap<Task, Var>, weighting: &Weighting<'_>) -> Result<Var> {
    let mut terms = Vec::with_capacity(losses.len());
    for (&t, &l) in losses {
        let term = match weighting {
            Weighting::Uncertainty { log_sigma, id_base } => {
                let s = *log_sigma.get(&t).ok_or_else(|| Error::MissingTask(t.name().into()))?;
                let sv = g.param_owned(log_sigma_id(*id_base, t), Array2::from_elem((1, 1), s));
                let e = g.scale(sv, -2.0);
                let e = g.exp(e);
                let w = g.scale(e, 0.5);
                let wl = g.mul(w, l);
                g.add(wl, sv)
            }
            Weighting::Static(weights) => {
                let w = *weights.get(&t).ok_or_else(|| Error::MissingTask(t.name().into()))?;
                g.scale(l, w)
            }
        };
        terms.push(term);
    }
    if terms.is_empty() {
        return Err(Error::InvalidConfig("no enabled losses".into()));
    }
    let all = g.concat_rows(&terms);
    Ok(g.sum(all))
}

/// Result of evaluating the objective on one sample.
pub struct SampleEval {
    pub bundle: LossBundle,
    pub total: f64,
    pub grads: Option<Gradients>,
}

/// Builds the graph for one sample, reads every task loss, and optionally
/// runs the reverse pass from the weighted total.
pub fn evaluate(
    model: &Model,
    p: &Prepared,
    cfg: &LossConfig,
    enabled: &BTreeSet<Task>,
    weighting: &Weighting<'_>,
    with_grads: bool,
) -> Result<SampleEval> {
    let mut g = Graph::new();
    let fwd = model.graph(&mut g, &p.seq, &p.vision)?;
    let losses = loss_vars(&mut g, &fwd, &p.seq, &p.targets, cfg, enabled)?;
    let total = total_var(&mut g, &losses, weighting)?;
    let bundle = LossBundle(losses.iter().map(|(&t, &v)| (t, g.scalar(v))).collect());
    let grads = with_grads.then(|| g.backward(total));
    Ok(SampleEval { bundle, total: g.scalar(total), grads })
}
