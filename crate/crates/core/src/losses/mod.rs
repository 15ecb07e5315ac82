//! Distillation objectives on plain arrays, the task bundle, and the
//! uncertainty-weighted and static totals. Graph versions used for training
//! live in [`objective`].

pub mod objective;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{log_softmax_rows, Mat};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Text,
    DepthReg,
    DepthCe,
    DepthKl,
    Detection,
    Spatial,
    Multiview,
    Feature,
}

impl Task {
    pub const ALL: [Task; 8] = [
        Task::Text,
        Task::DepthReg,
        Task::DepthCe,
        Task::DepthKl,
        Task::Detection,
        Task::Spatial,
        Task::Multiview,
        Task::Feature,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Text => "text",
            Task::DepthReg => "depth_reg",
            Task::DepthCe => "depth_ce",
            Task::DepthKl => "depth_kl",
            Task::Detection => "detection",
            Task::Spatial => "spatial",
            Task::Multiview => "multiview",
            Task::Feature => "feature",
        }
    }

    pub const DEPTH: [Task; 3] = [Task::DepthReg, Task::DepthCe, Task::DepthKl];
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown loss {s:?}")))
    }
}

/// Per-task loss values. Disabled tasks are absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LossBundle(pub BTreeMap<Task, f64>);

impl LossBundle {
    pub fn get(&self, t: Task) -> Option<f64> {
        self.0.get(&t).copied()
    }

    pub fn insert(&mut self, t: Task, v: f64) {
        self.0.insert(t, v);
    }

    pub fn tasks(&self) -> impl Iterator<Item = Task> + '_ {
        self.0.keys().copied()
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(|v| v.is_finite())
    }

    /// Element-wise sum, used to accumulate batch means.
    pub fn add_scaled(&mut self, other: &LossBundle, k: f64) {
        for (t, v) in &other.0 {
            *self.0.entry(*t).or_insert(0.0) += k * v;
        }
    }
}

impl fmt::Display for LossBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(t, v)| format!("{t}={v}")).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

/// Learnable `log σ` per task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UncertaintyParams {
    pub log_sigma: BTreeMap<Task, f64>,
}

impl UncertaintyParams {
    /// `σ = 1` for every task.
    pub fn new(tasks: impl IntoIterator<Item = Task>) -> Self {
        Self { log_sigma: tasks.into_iter().map(|t| (t, 0.0)).collect() }
    }

    /// `1 / (2σ²)`
    pub fn weight(&self, t: Task) -> Option<f64> {
        self.log_sigma.get(&t).map(|&s| effective_weight(s))
    }

    pub fn weights(&self) -> BTreeMap<Task, f64> {
        self.log_sigma.iter().map(|(&t, &s)| (t, effective_weight(s))).collect()
    }
}

pub fn effective_weight(log_sigma: f64) -> f64 {
    0.5 * (-2.0 * log_sigma).exp()
}

/// `log σ` whose effective weight `1/(2σ²)` equals `w`.
pub fn log_sigma_for_weight(w: f64) -> f64 {
    -0.5 * (2.0 * w).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Uncertainty,
    Static,
}

impl FromStr for LossMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uncertainty" => Ok(LossMode::Uncertainty),
            "static" => Ok(LossMode::Static),
            _ => Err(Error::InvalidConfig(format!("unknown loss mode {s:?}"))),
        }
    }
}

/// How the cross-view term compares pooled student features of two views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossView {
    /// Mean squared distance; minimizing it pulls views together.
    #[default]
    Distance,
    /// Cosine similarity added as is.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub temperature: f64,
    pub lambda_cross: f64,
    pub cross_view: CrossView,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub depth_bins: usize,
    /// Depth range, meters. 0 means the room diagonal.
    pub d_max: f64,
    /// Weight of hard-label cross-entropy mixed into the text loss.
    pub hard_label_mix: f64,
    /// Weights for the static total; tasks not listed default to 1.
    pub static_weights: BTreeMap<Task, f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 2.0,
            lambda_cross: 0.1,
            cross_view: CrossView::Distance,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            depth_bins: 8,
            d_max: 0.0,
            hard_label_mix: 0.0,
            static_weights: BTreeMap::new(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.lambda_cross >= 0.0) {
            return bad("lambda_cross must be nonnegative");
        }
        if !(self.focal_gamma >= 0.0) {
            return bad("focal_gamma must be nonnegative");
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return bad("focal_alpha must lie in (0, 1)");
        }
        if self.depth_bins < 2 {
            return bad("depth_bins must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.hard_label_mix) {
            return bad("hard_label_mix must lie in [0, 1]");
        }
        if self.static_weights.values().any(|&w| !(w >= 0.0)) {
            return bad("static weights must be nonnegative");
        }
        Ok(())
    }

    pub fn static_weight(&self, t: Task) -> f64 {
        self.static_weights.get(&t).copied().unwrap_or(1.0)
    }
}

fn mismatch(context: &str, expected: (usize, usize), actual: (usize, usize)) -> Error {
    Error::ShapeMismatch {
        context: context.to_string(),
        expected: vec![expected.0, expected.1],
        actual: vec![actual.0, actual.1],
    }
}

/// `Σ p (ln p − ln q)` with `0 · ln 0 = 0`.
fn kl_row(p: impl Iterator<Item = f64>, logq: impl Iterator<Item = f64>) -> f64 {
    p.zip(logq).filter(|(p, _)| *p > 0.0).map(|(p, lq)| p * (p.ln() - lq)).sum()
}

/// Mean over answer positions of `KL(softmax(t/τ) ‖ softmax(s/τ)) · τ²`.
/// Teacher probabilities can be passed as their logarithms (zeros become `−∞`).
pub fn text_distill_loss(student_logits: &Mat, teacher_logits: &Mat, tau: f64) -> Result<f64> {
    if student_logits.dim() != teacher_logits.dim() {
        return Err(mismatch("text distillation positions", teacher_logits.dim(), student_logits.dim()));
    }
    if student_logits.nrows() == 0 {
        return Ok(0.0);
    }
    let ls = log_softmax_rows((student_logits / tau).view());
    let lt = log_softmax_rows((teacher_logits / tau).view());
    let total: f64 = ls
        .outer_iter()
        .zip(lt.outer_iter())
        .map(|(s, t)| {
            t.iter().zip(s.iter()).filter(|(t, _)| t.is_finite()).map(|(t, s)| t.exp() * (t - s)).sum::<f64>()
        })
        .sum();
    Ok(total * tau * tau / student_logits.nrows() as f64)
}

/// Text loss over the full `total_len x vocab` logits where row `p − 1`
/// predicts the label at position `p` and masked labels carry zero weight.
/// `teacher_logits` has one row per unmasked label, in order.
pub fn text_loss_masked(logits: &Mat, labels: &[i64], teacher_logits: &Mat, tau: f64) -> Result<f64> {
    let n = logits.nrows();
    if labels.len() != n {
        return Err(mismatch("labels", (n, 1), (labels.len(), 1)));
    }
    let ls = log_softmax_rows((logits / tau).view());
    let lt = log_softmax_rows((teacher_logits / tau).view());
    let mut total = 0.0;
    let mut count = 0usize;
    for p in 1..n {
        let weight = if labels[p] == crate::sequence::LABEL_MASK { 0.0 } else { 1.0 };
        if weight == 0.0 {
            continue;
        }
        if count >= lt.nrows() {
            return Err(mismatch("teacher positions", (count + 1, lt.ncols()), lt.dim()));
        }
        let t = lt.row(count);
        let s = ls.row(p - 1);
        total += weight * t.iter().zip(s.iter()).filter(|(t, _)| t.is_finite()).map(|(t, s)| t.exp() * (t - s)).sum::<f64>();
        count += 1;
    }
    if count != lt.nrows() {
        return Err(mismatch("teacher positions", (count, lt.ncols()), lt.dim()));
    }
    Ok(if count == 0 { 0.0 } else { total * tau * tau / count as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthLosses {
    pub depth_reg: f64,
    pub depth_ce: f64,
    pub depth_kl: f64,
}

/// Uniform bin index of `depth` over `[0, d_max]`.
pub fn depth_bin(depth: f64, bins: usize, d_max: f64) -> usize {
    ((depth / (d_max / bins as f64)).floor().max(0.0) as usize).min(bins - 1)
}

/// Clamps `gt` into `[0, d_max]`, warning once if anything moved.
pub fn clamp_depth(gt: &Mat, d_max: f64) -> Mat {
    let out = gt.mapv(|d| d.clamp(0.0, d_max));
    if out != gt {
        log::warn!("ground-truth depth outside [0, {d_max}] was clamped");
    }
    out
}

/// `pred_scalar` and `gt` hold one depth per pixel (any matching shape);
/// `pred_bins` and `teacher_bins` are pixels x B distributions in the same order.
pub fn depth_losses(
    pred_scalar: &Mat,
    pred_bins: &Mat,
    gt: &Mat,
    teacher_bins: &Mat,
    bins: usize,
    d_max: f64,
) -> Result<DepthLosses> {
    if pred_scalar.dim() != gt.dim() {
        return Err(mismatch("depth prediction", gt.dim(), pred_scalar.dim()));
    }
    let n = gt.len();
    if pred_bins.dim() != (n, bins) {
        return Err(mismatch("depth bins", (n, bins), pred_bins.dim()));
    }
    if teacher_bins.dim() != (n, bins) {
        return Err(mismatch("teacher depth bins", (n, bins), teacher_bins.dim()));
    }
    let gt = clamp_depth(gt, d_max);
    let depth_reg = pred_scalar.iter().zip(gt.iter()).map(|(p, g)| (p - g).abs()).sum::<f64>() / n as f64;
    let mut ce = 0.0;
    let mut kl = 0.0;
    for (i, &g) in gt.iter().enumerate() {
        let row = pred_bins.row(i);
        ce -= row[depth_bin(g, bins, d_max)].max(1e-300).ln();
        kl += kl_row(teacher_bins.row(i).iter().copied(), row.iter().map(|q| q.max(1e-300).ln()));
    }
    Ok(DepthLosses { depth_reg, depth_ce: ce / n as f64, depth_kl: kl / n as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionLoss {
    pub focal: f64,
    pub localization: f64,
}

impl DetectionLoss {
    pub fn total(&self) -> f64 {
        self.focal + self.localization
    }
}

/// Focal term `−α(1−p_t)^γ ln p_t` averaged over objects, where `t` is the
/// teacher's argmax class, plus mean L1 over box parameters.
pub fn detection_loss(
    class_probs: &Mat,
    boxes: &Mat,
    teacher_class_probs: &Mat,
    gt_boxes: &Mat,
    gamma: f64,
    alpha: f64,
) -> Result<DetectionLoss> {
    if class_probs.dim() != teacher_class_probs.dim() {
        return Err(mismatch("detection classes", teacher_class_probs.dim(), class_probs.dim()));
    }
    if boxes.dim() != gt_boxes.dim() || boxes.nrows() != class_probs.nrows() {
        return Err(mismatch("detection boxes", gt_boxes.dim(), boxes.dim()));
    }
    let n = class_probs.nrows();
    if n == 0 {
        return Ok(DetectionLoss { focal: 0.0, localization: 0.0 });
    }
    let mut focal = 0.0;
    for (p, t) in class_probs.outer_iter().zip(teacher_class_probs.outer_iter()) {
        let target = crate::model::argmax(t.iter().copied());
        focal += focal_term(p[target], gamma, alpha);
    }
    let localization = if boxes.is_empty() {
        0.0
    } else {
        boxes.iter().zip(gt_boxes.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / boxes.len() as f64
    };
    Ok(DetectionLoss { focal: focal / n as f64, localization })
}

pub fn focal_term(p_t: f64, gamma: f64, alpha: f64) -> f64 {
    let p = p_t.clamp(1e-300, 1.0);
    -alpha * (1.0 - p).powf(gamma) * p.ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialTerms {
    /// `Σ_v Σ_ij ‖F_s − F_t‖²`
    pub alignment: f64,
    /// `λ Σ_{v1≠v2} D(pool F_s^(v1), pool F_s^(v2))`
    pub cross_view: f64,
}

impl SpatialTerms {
    pub fn total(&self) -> f64 {
        self.alignment + self.cross_view
    }
}

/// Column means of a `cells x channels` map.
pub fn pool_view(f: &Mat) -> Vec<f64> {
    let n = f.nrows().max(1) as f64;
    f.columns().into_iter().map(|c| c.sum() / n).collect()
}

pub fn view_distance(a: &[f64], b: &[f64], mode: CrossView) -> f64 {
    match mode {
        CrossView::Distance => a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64,
        CrossView::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                dot / (na * nb)
            }
        }
    }
}

/// Per view feature maps are `cells x channels`.
pub fn spatial_corresponding_loss(fs: &[Mat], ft: &[Mat], lambda: f64, mode: CrossView) -> Result<SpatialTerms> {
    if fs.is_empty() {
        return Err(Error::InvalidConfig("spatial loss needs at least one view".into()));
    }
    if fs.len() != ft.len() {
        return Err(mismatch("spatial views", (ft.len(), 0), (fs.len(), 0)));
    }
    let mut alignment = 0.0;
    for (s, t) in fs.iter().zip(ft) {
        if s.dim() != t.dim() {
            return Err(mismatch("spatial features", t.dim(), s.dim()));
        }
        alignment += s.iter().zip(t.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    let pooled: Vec<Vec<f64>> = fs.iter().map(pool_view).collect();
    let mut cross = 0.0;
    for (i, a) in pooled.iter().enumerate() {
        for (j, b) in pooled.iter().enumerate() {
            if i != j {
                cross += view_distance(a, b, mode);
            }
        }
    }
    Ok(SpatialTerms { alignment, cross_view: lambda * cross })
}

/// Mean over unordered view pairs of the mean squared difference of the
/// flattened per-view predictions.
pub fn multiview_consistency(preds: &[Mat]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..preds.len() {
        for j in i + 1..preds.len() {
            let (a, b) = (&preds[i], &preds[j]);
            total += a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64;
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// Distributions compared by feature alignment; rows are distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDists {
    pub det_classes: Mat,
    pub rel_lr: Mat,
    pub rel_ab: Mat,
    /// `1 x B`
    pub depth: Mat,
}

pub fn check_normalized(context: &str, m: &Mat) -> Result<()> {
    for (row, r) in m.outer_iter().enumerate() {
        let sum = r.sum();
        if (sum - 1.0).abs() > 1e-6 || r.iter().any(|&v| v < 0.0) {
            return Err(Error::Unnormalized { context: context.to_string(), row, sum });
        }
    }
    Ok(())
}

/// Mean over rows of `KL(teacher ‖ student)`.
pub fn mean_kl(teacher: &Mat, student: &Mat) -> f64 {
    if teacher.nrows() == 0 {
        return 0.0;
    }
    teacher
        .outer_iter()
        .zip(student.outer_iter())
        .map(|(t, s)| kl_row(t.iter().copied(), s.iter().map(|q| q.max(1e-300).ln())))
        .sum::<f64>()
        / teacher.nrows() as f64
}

/// Sum over the four groups of the row-mean `KL(teacher ‖ student)`.
pub fn feature_alignment(student: &FeatureDists, teacher: &FeatureDists) -> Result<f64> {
    let groups = [
        ("detector classes", &student.det_classes, &teacher.det_classes),
        ("left/right", &student.rel_lr, &teacher.rel_lr),
        ("above/below", &student.rel_ab, &teacher.rel_ab),
        ("depth bins", &student.depth, &teacher.depth),
    ];
    let mut total = 0.0;
    for (name, s, t) in groups {
        if s.dim() != t.dim() {
            return Err(mismatch(name, t.dim(), s.dim()));
        }
        check_normalized(&format!("student {name}"), s)?;
        check_normalized(&format!("teacher {name}"), t)?;
        total += mean_kl(t, s);
    }
    Ok(total)
}

/// `Σ_i exp(−2 log σ_i)/2 · L_i + log σ_i`
pub fn uncertainty_total(bundle: &LossBundle, params: &UncertaintyParams) -> Result<f64> {
    let mut total = 0.0;
    for (t, l) in &bundle.0 {
        let s = *params.log_sigma.get(t).ok_or_else(|| Error::MissingTask(t.name().into()))?;
        total += effective_weight(s) * l + s;
    }
    Ok(total)
}

/// `∂ total / ∂ log σ_i = 1 − exp(−2 log σ_i) · L_i`
pub fn uncertainty_grad(loss: f64, log_sigma: f64) -> f64 {
    1.0 - (-2.0 * log_sigma).exp() * loss
}

/// `Σ_i w_i L_i`
pub fn static_total(bundle: &LossBundle, weights: &BTreeMap<Task, f64>) -> Result<f64> {
    let mut total = 0.0;
    for (t, l) in &bundle.0 {
        let w = *weights.get(t).ok_or_else(|| Error::MissingTask(t.name().into()))?;
        total += w * l;
    }
    Ok(total)
}
