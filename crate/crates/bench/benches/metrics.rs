use criterion::{black_box, criterion_group, criterion_main, Criterion};

use hcot_core::evaluator::{corpus_bleu, meteor, rouge_l, text_metrics};

const PAIRS: [(&str, &str); 4] = [
    ("yes the lamp is touching the desk", "no the lamp is not touching the desk"),
    ("the sofa is left of the bed", "the sofa is in front of the bed"),
    ("the room has a bed table and chair", "the room has bed chair table and lamp"),
    ("no the box is smaller than the cabinet", "no the box is smaller than the cabinet"),
];

fn metrics(c: &mut Criterion) {
    let pairs: Vec<(String, String)> =
        PAIRS.iter().cycle().take(400).map(|(a, b)| (a.to_string(), b.to_string())).collect();
    c.bench_function("text_metrics_400", |b| b.iter(|| text_metrics(black_box(&pairs))));

    let words: Vec<(Vec<&str>, Vec<&str>)> =
        PAIRS.iter().map(|(a, b)| (a.split_whitespace().collect(), b.split_whitespace().collect())).collect();
    c.bench_function("meteor", |b| b.iter(|| words.iter().map(|(c, r)| meteor(c, r)).sum::<f64>()));
    c.bench_function("rouge_l", |b| b.iter(|| words.iter().map(|(c, r)| rouge_l(c, r).f1).sum::<f64>()));
    let corpus: Vec<(Vec<&str>, Vec<Vec<&str>>)> = words.iter().map(|(c, r)| (c.clone(), vec![r.clone()])).collect();
    c.bench_function("corpus_bleu_4", |b| b.iter(|| corpus_bleu(black_box(&corpus), 4)));
}

criterion_group!(benches, metrics);
criterion_main!(benches);
