use hcot_core::evaluator::{evaluate_model, teacher_answer, EvalOptions};
use hcot_core::model::THINKING;
use hcot_core::sequence::build_sequence;
use hcot_core::trainer::{train, RunDir, Trainer};
use hcot_core::{Checkpoint, Dataset, DatasetConfig, LossConfig, Model, ModelConfig, TrainConfig};

fn data_config() -> DatasetConfig {
    DatasetConfig {
        num_samples: 30,
        render_height: 8,
        render_width: 8,
        n_views: 2,
        spatial_shape: [2, 2, 3],
        depth_bins: 4,
        ..Default::default()
    }
}

fn model_config(data: &Dataset, k: usize) -> ModelConfig {
    ModelConfig { n_layers: 1, hidden_size: 16, n_heads: 2, mlp_dim: 32, k, vision_hidden: 12, ..Default::default() }
        .fit_to_data(&data.config, data.vocab.len())
}

#[test]
fn train_reload_evaluate_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    Dataset::generate(2, &data_config()).unwrap().save(&dir.path().join("data")).unwrap();
    let data = Dataset::load(&dir.path().join("data")).unwrap();

    let model = Model::new(model_config(&data, 2), 0).unwrap();
    let tc = TrainConfig { epochs: 2, learning_rate: 1e-3, ..Default::default() };
    let mut trainer = Trainer::new(model, tc, LossConfig { depth_bins: 4, ..Default::default() }).unwrap();
    let run = RunDir::new(dir.path().join("run")).unwrap();
    let record = train(&mut trainer, &data, Some(&run)).unwrap();
    assert_eq!(record.train_loss.len(), 2);
    assert!(run.record().is_file() && run.loss_log().is_file());

    let model = Checkpoint::load(&run.best()).unwrap().model();
    let (_, val) = data.split();
    let opts = EvalOptions { efficiency_runs: 0, max_new_tokens: 8, ..Default::default() };
    let (report, rows) = evaluate_model(&model, &data, &val, &opts).unwrap();
    assert_eq!(report.n_samples, val.len());
    assert_eq!(rows.len(), val.len());
    assert_eq!(report.depth.cells, val.len() * 2 * 64);
    assert!(report.depth.rmse.is_finite() && report.text.meteor.is_finite());
    assert!(rows.iter().all(|r| r.student_answer.split_whitespace().count() <= 8));
}

#[test]
fn teacher_targets_decode_to_the_oracle_answer() {
    let data = Dataset::generate(8, &data_config()).unwrap();
    for s in &data.samples {
        assert_eq!(teacher_answer(&data, s), s.qa.answer_text, "sample {}", s.id);
    }
}

#[test]
fn k0_student_is_the_plain_baseline() {
    let data = Dataset::generate(1, &data_config()).unwrap();
    let plain = Model::new(model_config(&data, 0), 3).unwrap();
    assert!(plain.params.get(THINKING).is_none());
    let with = Model::new(model_config(&data, 4), 3).unwrap();
    assert_eq!(with.param_count() - plain.param_count(), 4 * 16);

    let s = &data.samples[0];
    let seq = plain.sequence(&s.question_ids, &s.answer_ids).unwrap();
    assert_eq!(seq, build_sequence(0, &s.question_ids, &s.answer_ids, plain.config.max_seq_len, Default::default()).unwrap());
    assert_eq!(seq.question.start, 1);
}
