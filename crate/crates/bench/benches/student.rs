use criterion::{black_box, criterion_group, criterion_main, Criterion};

use hcot_core::losses::objective::{prepare, Prepared};
use hcot_core::trainer::Trainer;
use hcot_core::{Dataset, DatasetConfig, LossConfig, Model, ModelConfig, TrainConfig};

fn setup() -> (Dataset, Model, Vec<Prepared>) {
    let dc = DatasetConfig { num_samples: 16, ..Default::default() };
    let data = Dataset::generate(0, &dc).unwrap();
    let model = Model::new(ModelConfig::default().fit_to_data(&dc, data.vocab.len()), 0).unwrap();
    let prepared = data.samples.iter().map(|s| prepare(&model.config, &data, s).unwrap()).collect();
    (data, model, prepared)
}

fn student(c: &mut Criterion) {
    let (data, model, prepared) = setup();
    let p = &prepared[0];

    c.bench_function("forward", |b| b.iter(|| model.forward(black_box(&p.seq), black_box(&p.vision)).unwrap()));

    let q = &data.samples[0].question_ids;
    c.bench_function("generate_24", |b| b.iter(|| model.generate(black_box(&p.vision), q, 24, 0).unwrap()));

    let loss = LossConfig { depth_bins: data.config.depth_bins, ..Default::default() };
    let mut trainer = Trainer::new(model.clone(), TrainConfig::default(), loss).unwrap();
    let batch: Vec<&Prepared> = prepared.iter().take(8).collect();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("step_batch_8", |b| b.iter(|| trainer.step(black_box(&batch), 1e-4).unwrap()));
    group.finish();
}

criterion_group!(benches, student);
criterion_main!(benches);
