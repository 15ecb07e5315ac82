use super::*;
use rand::Rng;

pub(crate) fn tiny_config(k: usize) -> ModelConfig {
    ModelConfig {
        n_layers: 1,
        hidden_size: 16,
        n_heads: 2,
        mlp_dim: 32,
        vocab_size: 100,
        k,
        depth_bins: 4,
        max_seq_len: 40,
        spatial_feature_shape: [2, 2, 3],
        vision_hidden: 12,
        vision_pool: 2,
        n_views: 2,
        render_height: 4,
        render_width: 4,
        feature_channels: 3,
        max_objects: 3,
        d_max: 8.0,
        ..Default::default()
    }
}

fn random_vision(cfg: &ModelConfig, seed: u64) -> VisionInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    VisionInput {
        views: (0..cfg.n_views)
            .map(|_| Array2::from_shape_simple_fn((1, cfg.vision_input_dim()), || rng.gen_range(0.0..1.0)))
            .collect(),
    }
}

#[test]
fn lm_logit_batch_shape() {
    let model = Model::new(tiny_config(8), 1).unwrap();
    let vis = random_vision(&model.config, 2);
    let s1 = model.sequence(&[1, 5, 6, 7, 2], &[8, 9, 10, 2]).unwrap();
    let s2 = model.sequence(&[1, 5, 9, 7, 2], &[8, 11, 10, 2]).unwrap();
    let out = model.forward_batch(&[(s1, vis.clone()), (s2, vis)]).unwrap();
    assert_eq!(out.dim(), (2, 18, 100));
}

#[test]
fn answer_permutation_is_causal() {
    let model = Model::new(tiny_config(4), 3).unwrap();
    let vis = random_vision(&model.config, 4);
    let q = [1, 20, 21, 22, 2];
    let a = model.forward(&model.sequence(&q, &[30, 31, 32, 2]).unwrap(), &vis).unwrap();
    let b = model.forward(&model.sequence(&q, &[30, 32, 31, 2]).unwrap(), &vis).unwrap();
    let first = 1 + 4 + q.len() + 1;
    for r in 0..a.lm_logits.nrows() {
        let same = a.lm_logits.row(r) == b.lm_logits.row(r);
        assert_eq!(same, r < first, "row {r}");
    }
}

#[test]
fn heads_ignore_question_and_answer() {
    let model = Model::new(tiny_config(4), 5).unwrap();
    let vis = random_vision(&model.config, 6);
    let a = model.forward(&model.sequence(&[1, 20, 2], &[30, 2]).unwrap(), &vis).unwrap();
    let b = model.forward(&model.sequence(&[1, 40, 41, 2], &[50, 51, 2]).unwrap(), &vis).unwrap();
    assert_eq!(a.depth_pred, b.depth_pred);
    assert_eq!(a.depth_bins, b.depth_bins);
    assert_eq!(a.det_class_probs, b.det_class_probs);
    assert_eq!(a.spatial_features, b.spatial_features);
}

#[test]
fn output_distributions_normalized() {
    let model = Model::new(tiny_config(2), 5).unwrap();
    let out = model.forward(&model.sequence(&[1, 2], &[]).unwrap(), &random_vision(&model.config, 1)).unwrap();
    for m in out.depth_bins.iter().chain([&out.det_class_probs, &out.rel_lr, &out.rel_ab]) {
        for row in m.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }
    assert_eq!(out.spatial_features[0].dim(), (4, 3));
    assert!(out.depth_pred.iter().flatten().all(|&d| (0.0..=8.0).contains(&d)));
}

#[test]
fn zero_vision_gives_projection_bias() {
    let mut model = Model::new(tiny_config(2), 7).unwrap();
    let id = model.params.id("vision.b_out").unwrap();
    model.params.value_mut(id).iter_mut().enumerate().for_each(|(i, b)| *b = 0.1 * i as f64);
    let v = model.vision_project(&VisionInput::zeros(&model.config)).unwrap();
    assert_eq!(&v, model.params.value(id));
}

#[test]
fn vision_projection_depends_on_input() {
    let model = Model::new(tiny_config(2), 7).unwrap();
    let vis = random_vision(&model.config, 8);
    let a = model.vision_project(&vis).unwrap();
    assert_ne!(a, model.vision_project(&vis.scaled(2.0)).unwrap());
    assert_eq!(a, model.vision_project(&vis).unwrap());
}

#[test]
fn vision_shape_mismatch_is_an_error() {
    let model = Model::new(tiny_config(2), 7).unwrap();
    let bad = VisionInput { views: vec![Array2::zeros((1, 3)); 2] };
    assert!(matches!(model.vision_project(&bad), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn thinking_init_stddev() {
    let cfg = ModelConfig { k: 64, hidden_size: 64, n_heads: 4, mlp_dim: 64, max_seq_len: 80, ..tiny_config(64) };
    let store = init_params(&cfg, 11).unwrap();
    let t = store.get(THINKING).unwrap();
    assert_eq!(t.dim(), (64, 64));
    let n = t.len() as f64;
    let mean = t.sum() / n;
    let sd = (t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((0.015..=0.025).contains(&sd), "sd {sd}");
}

#[test]
fn no_thinking_table_for_k0() {
    let store = init_params(&tiny_config(0), 1).unwrap();
    assert!(store.get(THINKING).is_none());
    assert_eq!(store.len(), init_params(&tiny_config(3), 1).unwrap().len() - 1);
}

#[test]
fn init_is_deterministic() {
    assert_eq!(init_params(&tiny_config(4), 9).unwrap(), init_params(&tiny_config(4), 9).unwrap());
    assert_ne!(init_params(&tiny_config(4), 9).unwrap(), init_params(&tiny_config(4), 10).unwrap());
}

#[test]
fn generate_contract() {
    let model = Model::new(tiny_config(4), 13).unwrap();
    let vis = random_vision(&model.config, 1);
    let q = [1, 20, 21, 2];
    let a = model.generate(&vis, &q, 10, 0).unwrap();
    assert_eq!(a, model.generate(&vis, &q, 10, 0).unwrap());
    assert!(model.generate(&vis, &q, 0, 0).unwrap().is_empty());
    assert!(a.iter().all(|&id| (id as usize) < model.config.vocab_size));
    assert!(a.len() <= 10);
}

#[test]
fn decode_thinking_contract() {
    let model = Model::new(tiny_config(8), 13).unwrap();
    let vis = random_vision(&model.config, 1);
    let q = [1, 20, 21, 2];
    let before = model.generate(&vis, &q, 6, 0).unwrap();
    let thoughts = model.decode_thinking(&vis, &q).unwrap();
    assert_eq!(thoughts.len(), 8);
    assert_eq!(before, model.generate(&vis, &q, 6, 0).unwrap());
    let k0 = Model::new(tiny_config(0), 13).unwrap();
    assert!(k0.decode_thinking(&vis, &q).unwrap().is_empty());
}

#[test]
fn nan_reports_layer() {
    let mut model = Model::new(tiny_config(2), 1).unwrap();
    let id = model.params.id("layers.0.mlp.b2").unwrap();
    model.params.value_mut(id)[[0, 0]] = f64::NAN;
    let seq = model.sequence(&[1, 2], &[5, 2]).unwrap();
    let err = model.forward(&seq, &random_vision(&model.config, 1)).unwrap_err();
    assert!(matches!(err, Error::NonFinite { layer: 1 }));
}

#[test]
fn wrong_k_sequence_rejected() {
    let model = Model::new(tiny_config(2), 1).unwrap();
    let seq = build_sequence(3, &[1, 2], &[], 40, Layout::default()).unwrap();
    assert!(model.forward(&seq, &random_vision(&model.config, 1)).is_err());
}

#[test]
fn param_checkpoint_round_trip() {
    let model = Model::new(tiny_config(4), 1).unwrap();
    let mut file = crate::container::TensorFile::new();
    model.params.write_into(&mut file, "param.");
    assert_eq!(file.get("param.thinking_tokens").unwrap().shape(), &[1, 4, 16]);
    let bytes = file.to_bytes(crate::container::Precision::F64).unwrap();
    let back = crate::container::TensorFile::from_bytes(&bytes).unwrap();
    let mut other = Model::new(tiny_config(4), 2).unwrap();
    other.params.read_from(&back, "param.").unwrap();
    assert_eq!(other.params, model.params);
}

#[test]
fn check_data_names_both_shapes() {
    let dc = crate::scene::DatasetConfig::default();
    let cfg = ModelConfig::default().fit_to_data(&dc, 50);
    cfg.check_data(&dc, 50).unwrap();
    let fewer = crate::scene::DatasetConfig { max_objects: dc.max_objects - 1, ..dc.clone() };
    cfg.check_data(&fewer, 50).unwrap();

    let other = crate::scene::DatasetConfig { render_height: 8, render_width: 8, ..dc.clone() };
    let err = cfg.check_data(&other, 50).unwrap_err().to_string();
    assert!(err.contains("16x16") && err.contains("8x8"), "{err}");
    assert!(cfg.check_data(&dc, 51).unwrap_err().to_string().contains("vocab 51"));
}
