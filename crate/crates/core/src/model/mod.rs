//! The compact student: one projected vision token, K learnable thinking
//! tokens, a pre-LN causal transformer with an LM head, and task heads that
//! read only the per-view vision features.

mod config;
mod params;

use ndarray::{s, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::scene::{pool_grid, ViewRender};
use crate::sequence::{build_sequence, Layout, Slot, TokenSequence};
use crate::tokenizer::EOS;

pub use config::ModelConfig;
pub use params::{ParamStore, THINKING};

/// Per-view input vectors, each `1 x vision_input_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionInput {
    pub views: Vec<Mat>,
}

impl VisionInput {
    /// Pools each render by `vision_pool` and appends the pooled depth divided by `d_max`.
    pub fn from_views(cfg: &ModelConfig, views: &[ViewRender]) -> Result<Self> {
        if views.len() != cfg.n_views {
            return Err(shape_err("views", &[cfg.n_views], &[views.len()]));
        }
        let want = [cfg.render_height, cfg.render_width, cfg.feature_channels];
        let (ph, pw) = (cfg.pooled_height(), cfg.pooled_width());
        let mut out = Vec::with_capacity(views.len());
        for v in views {
            if v.features.shape() != want {
                return Err(shape_err("view features", &want, v.features.shape()));
            }
            if v.depth.shape() != &want[..2] {
                return Err(shape_err("view depth", &want[..2], v.depth.shape()));
            }
            let feats = pool_grid(&v.features, ph, pw);
            let depth3 = v.depth.mapv(|d| d / cfg.d_max).insert_axis(Axis(2));
            let depth = pool_grid(&depth3, ph, pw);
            let flat: Vec<f64> = feats.iter().chain(depth.iter()).copied().collect();
            out.push(Array2::from_shape_vec((1, flat.len()), flat).expect("row vector"));
        }
        Ok(Self { views: out })
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self { views: vec![Array2::zeros((1, cfg.vision_input_dim())); cfg.n_views] }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { views: self.views.iter().map(|v| v * k).collect() }
    }
}

fn shape_err(context: &str, expected: &[usize], actual: &[usize]) -> Error {
    Error::ShapeMismatch { context: context.to_string(), expected: expected.to_vec(), actual: actual.to_vec() }
}

/// Nodes of the vision branch and task heads in a graph.
#[derive(Debug, Clone)]
pub struct HeadVars {
    /// Per view `1 x vision_hidden`.
    pub view_features: Vec<Var>,
    /// `1 x vision_hidden` mean of the per-view features.
    pub pooled: Var,
    /// Per view `(rows·cols) x channels`.
    pub spatial: Vec<Var>,
    /// Per view `(H·W) x 1`, meters.
    pub depth_scalar: Vec<Var>,
    /// Per view `(H·W) x B` log-probabilities.
    pub depth_logp: Vec<Var>,
    /// `1 x B` mean bin distribution over views and pixels.
    pub pooled_depth: Var,
    /// Per view `slots x categories` class probabilities.
    pub det_probs_view: Vec<Var>,
    /// `slots x categories` log-probabilities of the view-averaged logits.
    pub det_logp: Var,
    pub det_probs: Var,
    /// `slots x 6` center and extent divided by the room size, in `[0, 1]`.
    pub det_boxes: Var,
    /// `pairs x 2` log-probabilities of (left of, right of).
    pub rel_lr_logp: Var,
    /// `pairs x 2` log-probabilities of (above, below).
    pub rel_ab_logp: Var,
}

#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub vision_token: Var,
    /// `total_len x vocab`
    pub lm_logits: Var,
    pub heads: HeadVars,
}

/// Plain-array student outputs for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentOutputs {
    pub lm_logits: Mat,
    pub spatial_features: Vec<Mat>,
    /// Per view H x W, meters.
    pub depth_pred: Vec<Mat>,
    /// Per view (H·W) x B.
    pub depth_bins: Vec<Mat>,
    pub det_class_probs: Mat,
    pub det_boxes: Mat,
    pub rel_lr: Mat,
    pub rel_ab: Mat,
    pub pooled_vision_features: Mat,
    pub vision_token: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// Draws every parameter in a fixed order from one seeded stream. Embeddings
/// and the thinking table use `N(0, init_std²)`; weight matrices use
/// `N(0, 1/fan_in)`; biases and LayerNorm shifts start at 0 and LayerNorm
/// gains at 1.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let d = cfg.hidden_size;
    let mut gauss = |rows: usize, cols: usize, std: f64| -> Mat {
        let normal = Normal::new(0.0, std).expect("valid std");
        Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut rng))
    };
    let fan = |n: usize| 1.0 / (n as f64).sqrt();

    let vin = cfg.vision_input_dim();
    let vh = cfg.vision_hidden;
    for v in 0..cfg.n_views {
        store.push(format!("vision.w_in.{v}"), gauss(vin, vh, fan(vin)));
    }
    store.push("vision.w_out", gauss(vh, d, fan(vh)));
    store.push("vision.b_out", Array2::zeros((1, d)));

    store.push("tok_emb", gauss(cfg.vocab_size, d, cfg.init_std));
    store.push("pos_emb", gauss(cfg.max_seq_len, d, cfg.init_std));
    if cfg.k > 0 {
        store.push(THINKING, gauss(cfg.k, d, cfg.init_std));
    }
    for l in 0..cfg.n_layers {
        let p = |n: &str| format!("layers.{l}.{n}");
        store.push(p("ln1.gamma"), Array2::ones((1, d)));
        store.push(p("ln1.beta"), Array2::zeros((1, d)));
        for w in ["wq", "wk", "wv", "wo"] {
            store.push(p(&format!("attn.{w}")), gauss(d, d, fan(d)));
        }
        store.push(p("attn.bo"), Array2::zeros((1, d)));
        store.push(p("ln2.gamma"), Array2::ones((1, d)));
        store.push(p("ln2.beta"), Array2::zeros((1, d)));
        store.push(p("mlp.w1"), gauss(d, cfg.mlp_dim, fan(d)));
        store.push(p("mlp.b1"), Array2::zeros((1, cfg.mlp_dim)));
        store.push(p("mlp.w2"), gauss(cfg.mlp_dim, d, fan(cfg.mlp_dim)));
        store.push(p("mlp.b2"), Array2::zeros((1, d)));
    }
    store.push("ln_f.gamma", Array2::ones((1, d)));
    store.push("ln_f.beta", Array2::zeros((1, d)));
    store.push("lm_head.w", gauss(d, cfg.vocab_size, fan(d)));
    store.push("lm_head.b", Array2::zeros((1, cfg.vocab_size)));

    let [sh, sw, sc] = cfg.spatial_feature_shape;
    let heads = [
        ("head.depth", cfg.pixels() * (1 + cfg.depth_bins)),
        ("head.spatial", sh * sw * sc),
        ("head.det", cfg.max_objects * (cfg.n_categories + 6)),
        ("head.rel", cfg.n_pairs() * 4),
    ];
    for (name, out) in heads {
        store.push(format!("{name}.w"), gauss(vh, out.max(1), fan(vh)));
        store.push(format!("{name}.b"), Array2::zeros((1, out.max(1))));
    }
    Ok(store)
}

fn check_finite(g: &Graph<'_>, v: Var, layer: usize) -> Result<()> {
    if g.value(v).iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { layer })
    }
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn p<'p>(&'p self, g: &mut Graph<'p>, name: &str) -> Var {
        let id = self.params.id(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        g.param(id, self.params.value(id))
    }

    pub fn sequence(&self, q_ids: &[u32], a_ids: &[u32]) -> Result<TokenSequence> {
        build_sequence(self.config.k, q_ids, a_ids, self.config.max_seq_len, self.config.layout)
    }

    /// Vision branch and heads. Layer index 0 in non-finite errors.
    pub fn vision_graph<'p>(&'p self, g: &mut Graph<'p>, vision: &VisionInput) -> Result<(Var, HeadVars)> {
        let (vision_token, view_features, pooled) = self.vision_trunk(g, vision)?;
        let heads = self.heads(g, view_features, pooled);
        Ok((vision_token, heads))
    }

    /// Vision token plus per-view and pooled features, without the heads.
    fn vision_trunk<'p>(&'p self, g: &mut Graph<'p>, vision: &VisionInput) -> Result<(Var, Vec<Var>, Var)> {
        let cfg = &self.config;
        if vision.views.len() != cfg.n_views {
            return Err(shape_err("vision input views", &[cfg.n_views], &[vision.views.len()]));
        }
        let mut view_features = Vec::with_capacity(cfg.n_views);
        for (v, x) in vision.views.iter().enumerate() {
            if x.dim() != (1, cfg.vision_input_dim()) {
                return Err(shape_err("vision input", &[1, cfg.vision_input_dim()], &[x.nrows(), x.ncols()]));
            }
            let xv = g.constant(x.clone());
            let w = self.p(g, &format!("vision.w_in.{v}"));
            let pre = g.matmul(xv, w);
            view_features.push(g.gelu(pre));
        }
        let stacked = g.concat_rows(&view_features);
        let pooled = g.mean_rows(stacked);
        let (w_out, b_out) = (self.p(g, "vision.w_out"), self.p(g, "vision.b_out"));
        let proj = g.matmul(pooled, w_out);
        let vision_token = g.add(proj, b_out);
        check_finite(g, vision_token, 0)?;
        Ok((vision_token, view_features, pooled))
    }

    fn linear<'p>(&'p self, g: &mut Graph<'p>, x: Var, name: &str) -> Var {
        let (w, b) = (self.p(g, &format!("{name}.w")), self.p(g, &format!("{name}.b")));
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    fn heads<'p>(&'p self, g: &mut Graph<'p>, view_features: Vec<Var>, pooled: Var) -> HeadVars {
        let cfg = &self.config;
        let (hw, b) = (cfg.pixels(), cfg.depth_bins);
        let [sh, sw, sc] = cfg.spatial_feature_shape;
        let (m, nc) = (cfg.max_objects, cfg.n_categories);

        let mut spatial = Vec::new();
        let mut depth_scalar = Vec::new();
        let mut depth_logp = Vec::new();
        let mut depth_probs = Vec::new();
        let mut det_logits = Vec::new();
        let mut det_probs_view = Vec::new();
        let mut box_sig = Vec::new();
        for &h in &view_features {
            let sp = self.linear(g, h, "head.spatial");
            spatial.push(g.reshape(sp, sh * sw, sc));

            let dp = self.linear(g, h, "head.depth");
            let dp = g.reshape(dp, hw, 1 + b);
            let scalar = g.slice_cols(dp, 0, 1);
            let scalar = g.sigmoid(scalar);
            depth_scalar.push(g.scale(scalar, cfg.d_max));
            let bins = g.slice_cols(dp, 1, 1 + b);
            let logp = g.log_softmax(bins);
            depth_probs.push(g.exp(logp));
            depth_logp.push(logp);

            let det = self.linear(g, h, "head.det");
            let det = g.reshape(det, m, nc + 6);
            let cls = g.slice_cols(det, 0, nc);
            det_probs_view.push(g.softmax(cls));
            det_logits.push(cls);
            let bx = g.slice_cols(det, nc, nc + 6);
            box_sig.push(g.sigmoid(bx));
        }
        let all_depth = g.concat_rows(&depth_probs);
        let pooled_depth = g.mean_rows(all_depth);
        let inv_views = 1.0 / cfg.n_views as f64;
        let mean_of = |g: &mut Graph<'p>, xs: &[Var]| {
            let mut acc = xs[0];
            for &x in &xs[1..] {
                acc = g.add(acc, x);
            }
            g.scale(acc, inv_views)
        };
        let det_mean = mean_of(g, &det_logits);
        let det_logp = g.log_softmax(det_mean);
        let det_probs = g.exp(det_logp);
        let det_boxes = mean_of(g, &box_sig);

        let rel = self.linear(g, pooled, "head.rel");
        let p = cfg.n_pairs().max(1);
        let rel = g.reshape(rel, p, 4);
        let lr = g.slice_cols(rel, 0, 2);
        let ab = g.slice_cols(rel, 2, 4);
        let rel_lr_logp = g.log_softmax(lr);
        let rel_ab_logp = g.log_softmax(ab);

        HeadVars {
            view_features,
            pooled,
            spatial,
            depth_scalar,
            depth_logp,
            pooled_depth,
            det_probs_view,
            det_logp,
            det_probs,
            det_boxes,
            rel_lr_logp,
            rel_ab_logp,
        }
    }

    fn check_sequence(&self, seq: &TokenSequence) -> Result<()> {
        let n = seq.total_len();
        if n > self.config.max_seq_len {
            return Err(Error::SequenceTooLong { total: n, max: self.config.max_seq_len });
        }
        if seq.k() != self.config.k {
            return Err(shape_err("thinking span", &[self.config.k], &[seq.k()]));
        }
        Ok(())
    }

    /// Full forward pass into `g`. Errors name the transformer layer (from 1)
    /// whose output is non-finite; 0 is the vision projection.
    pub fn graph<'p>(&'p self, g: &mut Graph<'p>, seq: &TokenSequence, vision: &VisionInput) -> Result<ForwardVars> {
        self.check_sequence(seq)?;
        let (vision_token, heads) = self.vision_graph(g, vision)?;
        let lm_logits = self.lm_graph(g, seq, vision_token)?;
        Ok(ForwardVars { vision_token, lm_logits, heads })
    }

    /// Transformer trunk and LM head over `seq` given the vision token node.
    pub fn lm_graph<'p>(&'p self, g: &mut Graph<'p>, seq: &TokenSequence, vision_token: Var) -> Result<Var> {
        self.check_sequence(seq)?;
        let cfg = &self.config;
        let n = seq.total_len();
        let tok = self.p(g, "tok_emb");
        let mut parts = Vec::with_capacity(4);
        let slots = seq.slots();
        let mut i = 0;
        while i < n {
            match slots[i] {
                Slot::Vision => {
                    parts.push(vision_token);
                    i += 1;
                }
                Slot::Thinking(_) => {
                    parts.push(self.p(g, THINKING));
                    i += cfg.k;
                }
                Slot::Token(_) => {
                    let mut ids = Vec::new();
                    while i < n {
                        match slots[i] {
                            Slot::Token(id) if (id as usize) < cfg.vocab_size => ids.push(id as usize),
                            Slot::Token(id) => return Err(shape_err("token id", &[cfg.vocab_size], &[id as usize])),
                            _ => break,
                        }
                        i += 1;
                    }
                    parts.push(g.gather(tok, &ids));
                }
            }
        }
        let emb = g.concat_rows(&parts);
        let pos = self.p(g, "pos_emb");
        let pos = g.slice_rows(pos, 0, n);
        let mut x = g.add(emb, pos);

        let hd = cfg.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        for l in 0..cfg.n_layers {
            let name = |s: &str| format!("layers.{l}.{s}");
            let (g1, b1) = (self.p(g, &name("ln1.gamma")), self.p(g, &name("ln1.beta")));
            let h = g.layer_norm(x, g1, b1, cfg.ln_eps);
            let wq = self.p(g, &name("attn.wq"));
            let wk = self.p(g, &name("attn.wk"));
            let wv = self.p(g, &name("attn.wv"));
            let q = g.matmul(h, wq);
            let k = g.matmul(h, wk);
            let v = g.matmul(h, wv);
            let mut heads_out = Vec::with_capacity(cfg.n_heads);
            for hh in 0..cfg.n_heads {
                let (a, b) = (hh * hd, (hh + 1) * hd);
                let qh = g.slice_cols(q, a, b);
                let kh = g.slice_cols(k, a, b);
                let vh = g.slice_cols(v, a, b);
                let scores = g.matmul_t(qh, kh);
                let scores = g.scale(scores, scale);
                let att = g.causal_softmax(scores);
                heads_out.push(g.matmul(att, vh));
            }
            let cat = if heads_out.len() == 1 { heads_out[0] } else { g.concat_cols(&heads_out) };
            let (wo, bo) = (self.p(g, &name("attn.wo")), self.p(g, &name("attn.bo")));
            let o = g.matmul(cat, wo);
            let o = g.add_row(o, bo);
            x = g.add(x, o);

            let (g2, b2) = (self.p(g, &name("ln2.gamma")), self.p(g, &name("ln2.beta")));
            let h = g.layer_norm(x, g2, b2, cfg.ln_eps);
            let (w1, bb1) = (self.p(g, &name("mlp.w1")), self.p(g, &name("mlp.b1")));
            let (w2, bb2) = (self.p(g, &name("mlp.w2")), self.p(g, &name("mlp.b2")));
            let m = g.matmul(h, w1);
            let m = g.add_row(m, bb1);
            let m = g.gelu(m);
            let m = g.matmul(m, w2);
            let m = g.add_row(m, bb2);
            x = g.add(x, m);
            check_finite(g, x, l + 1)?;
        }
        let (gf, bf) = (self.p(g, "ln_f.gamma"), self.p(g, "ln_f.beta"));
        let h = g.layer_norm(x, gf, bf, cfg.ln_eps);
        let (w, b) = (self.p(g, "lm_head.w"), self.p(g, "lm_head.b"));
        let logits = g.matmul(h, w);
        let lm_logits = g.add_row(logits, b);
        check_finite(g, lm_logits, cfg.n_layers + 1)?;
        Ok(lm_logits)
    }

    /// The single vision embedding for `vision`, as a `1 x hidden` row.
    pub fn vision_project(&self, vision: &VisionInput) -> Result<Mat> {
        let mut g = Graph::new();
        let (v, _, _) = self.vision_trunk(&mut g, vision)?;
        Ok(g.value(v).to_owned())
    }

    pub fn forward(&self, seq: &TokenSequence, vision: &VisionInput) -> Result<StudentOutputs> {
        let mut g = Graph::new();
        let f = self.graph(&mut g, seq, vision)?;
        Ok(self.collect(&g, &f))
    }

    fn collect(&self, g: &Graph<'_>, f: &ForwardVars) -> StudentOutputs {
        let cfg = &self.config;
        let val = |v: Var| g.value(v).to_owned();
        let h = &f.heads;
        StudentOutputs {
            lm_logits: val(f.lm_logits),
            spatial_features: h.spatial.iter().map(|&v| val(v)).collect(),
            depth_pred: h
                .depth_scalar
                .iter()
                .map(|&v| val(v).into_shape_with_order((cfg.render_height, cfg.render_width)).expect("depth grid"))
                .collect(),
            depth_bins: h.depth_logp.iter().map(|&v| val(v).mapv(f64::exp)).collect(),
            det_class_probs: val(h.det_probs),
            det_boxes: val(h.det_boxes),
            rel_lr: val(h.rel_lr_logp).mapv(f64::exp),
            rel_ab: val(h.rel_ab_logp).mapv(f64::exp),
            pooled_vision_features: val(h.pooled),
            vision_token: val(f.vision_token),
        }
    }

    /// LM logits for equal-length sequences: `batch x total_len x vocab`.
    pub fn forward_batch(&self, batch: &[(TokenSequence, VisionInput)]) -> Result<Array3<f64>> {
        let n = batch.first().map_or(0, |(s, _)| s.total_len());
        let mut out = Array3::zeros((batch.len(), n, self.config.vocab_size));
        for (i, (seq, vision)) in batch.iter().enumerate() {
            if seq.total_len() != n {
                return Err(shape_err("batch sequence length", &[n], &[seq.total_len()]));
            }
            let o = self.forward(seq, vision)?;
            out.slice_mut(s![i, .., ..]).assign(&o.lm_logits);
        }
        Ok(out)
    }

    fn next_logits(&self, q_ids: &[u32], prefix: &[u32], vision_token: &Mat) -> Result<(TokenSequence, Mat)> {
        let seq = self.sequence(q_ids, prefix)?;
        let mut g = Graph::new();
        let v = g.constant(vision_token.clone());
        let logits = self.lm_graph(&mut g, &seq, v)?;
        Ok((seq, g.value(logits).to_owned()))
    }

    /// Greedy decoding after `[V][T][Q]`. Stops at EOS (not returned), at
    /// `max_new_tokens`, or when the sequence would exceed `max_seq_len`.
    /// `_seed` is accepted for interface stability; greedy decoding draws nothing.
    pub fn generate(&self, vision: &VisionInput, q_ids: &[u32], max_new_tokens: usize, _seed: u64) -> Result<Vec<u32>> {
        let token = self.vision_project(vision)?;
        let mut out = Vec::new();
        while out.len() < max_new_tokens {
            if 1 + self.config.k + q_ids.len() + out.len() + 1 > self.config.max_seq_len {
                break;
            }
            let (seq, logits) = self.next_logits(q_ids, &out, &token)?;
            let row = logits.row(seq.total_len() - 1);
            let next = argmax(row.iter().copied()) as u32;
            if next == EOS {
                break;
            }
            out.push(next);
        }
        Ok(out)
    }

    /// Argmax vocabulary ids of the LM head at each thinking position.
    /// Read-only; empty when `k == 0`.
    pub fn decode_thinking(&self, vision: &VisionInput, q_ids: &[u32]) -> Result<Vec<u32>> {
        if self.config.k == 0 {
            return Ok(Vec::new());
        }
        let (seq, logits) = self.next_logits(q_ids, &[], &self.vision_project(vision)?)?;
        Ok(seq.thinking.range().map(|r| argmax(logits.row(r).iter().copied()) as u32).collect())
    }

    pub fn layout(&self) -> Layout {
        self.config.layout
    }
}

/// Index of the first maximum.
pub fn argmax(xs: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in xs.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

#[cfg(test)]
mod tests;
