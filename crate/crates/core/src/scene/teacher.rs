//! Programmatic teacher: exact answers with label smoothing, projected spatial
//! features, binned depth, one-hot detections and pairwise relation
//! distributions, all derived from the ground-truth scene.

use std::sync::Arc;

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Category, DatasetConfig, QaSample, SceneGraph, ViewRender};
use crate::error::{Error, Result};
use crate::tokenizer::{normalize, Vocab, EOS};

const PROJECTION_SEED: u64 = 0x7EAC_4E55;

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherConfig {
    pub label_smoothing: f64,
    pub depth_bins: usize,
    /// Upper edge of the depth bins, meters.
    pub d_max: f64,
    pub depth_smoothing: f64,
    pub spatial_shape: [usize; 3],
    pub feature_channels: usize,
}

impl TeacherConfig {
    pub fn from_dataset(cfg: &DatasetConfig) -> Self {
        Self {
            label_smoothing: cfg.label_smoothing,
            depth_bins: cfg.depth_bins,
            d_max: cfg.room_diagonal(),
            depth_smoothing: cfg.depth_smoothing,
            spatial_shape: cfg.spatial_shape,
            feature_channels: cfg.feature_channels(),
        }
    }

    /// Fixed channel projection from render features to spatial channels.
    pub fn projection(&self) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
        let normal = Normal::new(0.0, 1.0 / (self.feature_channels as f64).sqrt()).expect("valid normal");
        Array2::from_shape_simple_fn((self.feature_channels, self.spatial_shape[2]), || normal.sample(&mut rng))
    }

    pub fn depth_bin(&self, depth: f64) -> usize {
        let width = self.d_max / self.depth_bins as f64;
        ((depth.max(0.0) / width).floor() as usize).min(self.depth_bins - 1)
    }
}

/// Scene-level supervision shared by every question about the same scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSignal {
    /// Per view: (rows·cols) x channels.
    pub spatial_features: Vec<Array2<f64>>,
    /// Per view: (H·W) x B.
    pub depth_bin_dist: Vec<Array2<f64>>,
    /// 1 x B mean of all per-pixel bin distributions.
    pub pooled_depth_bins: Array2<f64>,
    /// objects x categories.
    pub det_class_probs: Array2<f64>,
    /// objects x 6: center xyz and world-aligned extent xyz, meters.
    pub det_boxes: Array2<f64>,
    /// pairs (i < j in object order) x 2: P(i left of j), P(i right of j).
    pub rel_lr: Array2<f64>,
    /// pairs x 2: P(i above j), P(i below j).
    pub rel_ab: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherSignal {
    /// Answer words followed by EOS.
    pub answer_token_ids: Vec<u32>,
    /// |A| x vocab label-smoothed one-hots.
    pub soft_logits: Array2<f64>,
    pub scene: Arc<SceneSignal>,
}

fn smoothed_one_hot(n: usize, hot: usize, eps: f64) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| if i == hot { 1.0 - eps + eps / n as f64 } else { eps / n as f64 })
}

/// Average-pools an H x W x C grid into `rows x cols` blocks: (rows·cols) x C.
pub fn pool_grid(grid: &Array3<f64>, rows: usize, cols: usize) -> Array2<f64> {
    let (h, w, c) = grid.dim();
    let (bh, bw) = (h / rows, w / cols);
    let mut out = Array2::zeros((rows * cols, c));
    for r in 0..h {
        for q in 0..w {
            let cell = (r / bh) * cols + q / bw;
            for k in 0..c {
                out[[cell, k]] += grid[[r, q, k]];
            }
        }
    }
    out.mapv_inplace(|v| v / (bh * bw) as f64);
    out
}

fn pairwise(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

fn binary_dist(first: bool, tie: bool, eps: f64) -> [f64; 2] {
    if tie {
        [0.5, 0.5]
    } else if first {
        [1.0 - eps / 2.0, eps / 2.0]
    } else {
        [eps / 2.0, 1.0 - eps / 2.0]
    }
}

pub fn scene_signal(scene: &SceneGraph, views: &[ViewRender], cfg: &TeacherConfig) -> SceneSignal {
    let [sh, sw, _] = cfg.spatial_shape;
    let proj = cfg.projection();
    let spatial_features = views.iter().map(|v| pool_grid(&v.features, sh, sw).dot(&proj)).collect();

    let b = cfg.depth_bins;
    let depth_bin_dist: Vec<Array2<f64>> = views
        .iter()
        .map(|v| {
            let flat: Vec<f64> =
                v.depth.iter().flat_map(|&d| smoothed_one_hot(b, cfg.depth_bin(d), cfg.depth_smoothing)).collect();
            Array2::from_shape_vec((v.depth.len(), b), flat).expect("depth bins shape")
        })
        .collect();
    let total_px: usize = depth_bin_dist.iter().map(|d| d.nrows()).sum();
    let mut pooled_depth_bins = Array2::zeros((1, b));
    for d in &depth_bin_dist {
        for row in d.outer_iter() {
            for k in 0..b {
                pooled_depth_bins[[0, k]] += row[k];
            }
        }
    }
    pooled_depth_bins.mapv_inplace(|v| v / total_px.max(1) as f64);

    let n = scene.objects.len();
    let mut det_class_probs = Array2::zeros((n, Category::COUNT));
    let mut det_boxes = Array2::zeros((n, 6));
    for (i, o) in scene.objects.iter().enumerate() {
        det_class_probs[[i, o.category.index()]] = 1.0;
        let bb = o.aabb();
        let (c, e) = (bb.center(), bb.extent());
        for k in 0..3 {
            det_boxes[[i, k]] = c[k];
            det_boxes[[i, 3 + k]] = e[k];
        }
    }

    let pairs: Vec<(usize, usize)> = pairwise(n).collect();
    let mut rel_lr = Array2::zeros((pairs.len(), 2));
    let mut rel_ab = Array2::zeros((pairs.len(), 2));
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let (a, bo) = (&scene.objects[i], &scene.objects[j]);
        let lr = binary_dist(a.center[0] < bo.center[0], a.center[0] == bo.center[0], cfg.label_smoothing);
        let ab = binary_dist(a.center[2] > bo.center[2], a.center[2] == bo.center[2], cfg.label_smoothing);
        rel_lr.row_mut(p).assign(&ndarray::arr1(&lr));
        rel_ab.row_mut(p).assign(&ndarray::arr1(&ab));
    }

    SceneSignal { spatial_features, depth_bin_dist, pooled_depth_bins, det_class_probs, det_boxes, rel_lr, rel_ab }
}

/// Answer ids and label-smoothed targets; errors if a word is not in `vocab`.
pub fn answer_signal(qa: &QaSample, vocab: &Vocab, label_smoothing: f64) -> Result<(Vec<u32>, Array2<f64>)> {
    let mut ids = Vec::new();
    for w in normalize(&qa.answer_text).into_iter().chain(normalize(&qa.question_text)) {
        if !vocab.contains(&w) {
            return Err(Error::MissingVocabWord(w));
        }
    }
    for w in normalize(&qa.answer_text) {
        ids.push(vocab.id(&w).expect("checked above"));
    }
    ids.push(EOS);
    let v = vocab.len();
    let flat: Vec<f64> = ids.iter().flat_map(|&id| smoothed_one_hot(v, id as usize, label_smoothing)).collect();
    let soft = Array2::from_shape_vec((ids.len(), v), flat).expect("soft logits shape");
    Ok((ids, soft))
}

pub fn teacher_signals(
    scene: &SceneGraph,
    views: &[ViewRender],
    qa: &QaSample,
    vocab: &Vocab,
    cfg: &TeacherConfig,
) -> Result<TeacherSignal> {
    let (answer_token_ids, soft_logits) = answer_signal(qa, vocab, cfg.label_smoothing)?;
    Ok(TeacherSignal { answer_token_ids, soft_logits, scene: Arc::new(scene_signal(scene, views, cfg)) })
}

#[cfg(test)]
mod tests {
    use super::super::{generate_scene, make_qa, render_views, DatasetConfig};
    use super::*;

    fn setup(eps: f64) -> (SceneGraph, Vec<ViewRender>, Vec<QaSample>, Vocab, TeacherConfig) {
        let cfg = DatasetConfig { label_smoothing: eps, ..Default::default() };
        let scene = generate_scene(11, &cfg).unwrap();
        let views = render_views(&scene, cfg.n_views, cfg.render_height, cfg.render_width);
        let qa = make_qa(&scene, 0, 11, &cfg.thresholds());
        let corpus: Vec<String> = qa.iter().flat_map(|q| [q.question_text.clone(), q.answer_text.clone()]).collect();
        (scene, views, qa, Vocab::build(&corpus), TeacherConfig::from_dataset(&cfg))
    }

    fn assert_rows_normalized(m: &Array2<f64>) {
        for row in m.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn zero_smoothing_gives_exact_one_hots() {
        let (scene, views, qa, vocab, cfg) = setup(0.0);
        let t = teacher_signals(&scene, &views, &qa[0], &vocab, &cfg).unwrap();
        for row in t.soft_logits.outer_iter() {
            assert_eq!(row.sum(), 1.0);
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
        }
        assert_eq!(vocab.decode(&t.answer_token_ids), qa[0].answer_text);
    }

    #[test]
    fn smoothing_mass_matches_formula() {
        let corpus: Vec<String> = (0..96).map(|i| format!("w{i}")).collect();
        let vocab = Vocab::build(&corpus);
        assert_eq!(vocab.len(), 100);
        let qa = QaSample {
            scene_id: 0,
            question_text: "w1".into(),
            answer_text: "w5".into(),
            relation: super::super::Relation::Describe,
            referenced_object_ids: vec![],
        };
        let (ids, soft) = answer_signal(&qa, &vocab, 0.1).unwrap();
        let hot = soft[[0, ids[0] as usize]];
        assert!((hot - (0.9 + 0.1 / 100.0)).abs() < 1e-12);
        assert_rows_normalized(&soft);
    }

    #[test]
    fn depth_bin_edges() {
        let cfg = TeacherConfig {
            label_smoothing: 0.0,
            depth_bins: 4,
            d_max: 8.0,
            depth_smoothing: 0.0,
            spatial_shape: [4, 4, 8],
            feature_channels: 8,
        };
        assert_eq!(cfg.depth_bin(0.0), 0);
        assert_eq!(cfg.depth_bin(1.99), 0);
        assert_eq!(cfg.depth_bin(2.0), 1);
        assert_eq!(cfg.depth_bin(8.0), 3);
        assert_eq!(cfg.depth_bin(-1.0), 0);
    }

    #[test]
    fn all_distributions_normalized_and_shaped() {
        let (scene, views, qa, vocab, cfg) = setup(0.1);
        for q in &qa {
            let t = teacher_signals(&scene, &views, q, &vocab, &cfg).unwrap();
            assert_rows_normalized(&t.soft_logits);
            let s = &t.scene;
            s.depth_bin_dist.iter().for_each(assert_rows_normalized);
            assert_rows_normalized(&s.pooled_depth_bins);
            assert_rows_normalized(&s.det_class_probs);
            assert_rows_normalized(&s.rel_lr);
            assert_rows_normalized(&s.rel_ab);
            assert_eq!(s.spatial_features.len(), views.len());
            assert_eq!(s.spatial_features[0].dim(), (16, 8));
            assert_eq!(s.det_boxes.dim(), (scene.objects.len(), 6));
        }
    }

    #[test]
    fn missing_word_is_a_hard_error() {
        let (scene, views, qa, _, cfg) = setup(0.1);
        let tiny = Vocab::build(&["is the"]);
        assert!(matches!(teacher_signals(&scene, &views, &qa[0], &tiny, &cfg), Err(Error::MissingVocabWord(_))));
    }
}
