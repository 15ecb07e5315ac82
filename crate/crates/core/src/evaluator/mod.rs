//! Text, depth, spatial and efficiency metrics plus the qualitative dump.

pub mod text;

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use text::{align, bleu_n, chunks, corpus_bleu, lcs_len, meteor, rouge, rouge_l, rouge_n, stem, Prf, RougeVariant};

use crate::autodiff::Graph;
use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::model::{argmax, Model, VisionInput};
use crate::scene::{parse_answer, Relation};
use crate::tokenizer::{normalize, EOS};
use crate::trainer::Checkpoint;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub rmse: f64,
    pub mae: f64,
    #[serde(rename = "delta_1.25")]
    pub delta_1_25: f64,
    /// Cells with nonpositive ground truth, left out of δ.
    pub excluded: usize,
    pub cells: usize,
}

/// Running sums for depth metrics over many maps.
#[derive(Debug, Clone, Copy, Default)]
pub struct DepthAccumulator {
    sq: f64,
    abs: f64,
    n: usize,
    hits: usize,
    valid: usize,
    excluded: usize,
}

impl DepthAccumulator {
    pub fn add(&mut self, pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<()> {
        if pred.dim() != gt.dim() {
            return Err(Error::ShapeMismatch {
                context: "depth prediction vs ground truth".into(),
                expected: vec![gt.nrows(), gt.ncols()],
                actual: vec![pred.nrows(), pred.ncols()],
            });
        }
        for (&p, &g) in pred.iter().zip(gt.iter()) {
            let d = p - g;
            self.sq += d * d;
            self.abs += d.abs();
            self.n += 1;
            if g > 0.0 && p > 0.0 {
                self.valid += 1;
                if (p / g).max(g / p) < 1.25 {
                    self.hits += 1;
                }
            } else if g > 0.0 {
                self.valid += 1;
            } else {
                self.excluded += 1;
            }
        }
        Ok(())
    }

    pub fn merge(mut self, o: &Self) -> Self {
        self.sq += o.sq;
        self.abs += o.abs;
        self.n += o.n;
        self.hits += o.hits;
        self.valid += o.valid;
        self.excluded += o.excluded;
        self
    }

    pub fn finish(&self) -> DepthMetrics {
        let n = self.n.max(1) as f64;
        DepthMetrics {
            rmse: (self.sq / n).sqrt(),
            mae: self.abs / n,
            delta_1_25: if self.valid == 0 { 0.0 } else { self.hits as f64 / self.valid as f64 },
            excluded: self.excluded,
            cells: self.n,
        }
    }
}

/// RMSE, MAE and the fraction of cells with `max(p/g, g/p) < 1.25`.
pub fn depth_metrics(pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<DepthMetrics> {
    let mut acc = DepthAccumulator::default();
    acc.add(pred, gt)?;
    Ok(acc.finish())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub total: usize,
    pub correct: usize,
    pub unparseable: usize,
}

impl CategoryCount {
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

/// Per-category accuracy. A category with no samples is `None`; `overall`
/// is the mean over categories present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpatialAccuracy {
    pub proximity: Option<f64>,
    pub contact: Option<f64>,
    pub size: Option<f64>,
    pub orientation: Option<f64>,
    pub overall: f64,
    pub unparseable: usize,
    pub unparseable_fraction: f64,
    pub counts: BTreeMap<Relation, CategoryCount>,
}

impl SpatialAccuracy {
    pub fn category(&self, r: Relation) -> Option<f64> {
        match r {
            Relation::Proximity => self.proximity,
            Relation::Contact => self.contact,
            Relation::Size => self.size,
            Relation::Orientation => self.orientation,
            Relation::Describe => None,
        }
    }

    fn from_counts(counts: BTreeMap<Relation, CategoryCount>) -> Self {
        let acc = |r| counts.get(&r).and_then(CategoryCount::accuracy);
        let present: Vec<f64> = Relation::SPATIAL.iter().filter_map(|&r| acc(r)).collect();
        let total: usize = counts.values().map(|c| c.total).sum();
        let unparseable = counts.values().map(|c| c.unparseable).sum();
        Self {
            proximity: acc(Relation::Proximity),
            contact: acc(Relation::Contact),
            size: acc(Relation::Size),
            orientation: acc(Relation::Orientation),
            overall: if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 },
            unparseable,
            unparseable_fraction: if total == 0 { 0.0 } else { unparseable as f64 / total as f64 },
            counts,
        }
    }

    /// Each category divided by the teacher's accuracy on it.
    pub fn relative_to(&self, teacher: &SpatialAccuracy) -> BTreeMap<Relation, f64> {
        let mut out = BTreeMap::new();
        for r in Relation::SPATIAL {
            if let (Some(s), Some(t)) = (self.category(r), teacher.category(r)) {
                if t > 0.0 {
                    out.insert(r, s / t);
                }
            }
        }
        out
    }
}

/// `None` when the answer does not parse; otherwise whether it agrees with the oracle.
pub fn judge(relation: Relation, answer: &str, oracle: &str) -> Option<bool> {
    let want = parse_answer(relation, oracle)?;
    parse_answer(relation, answer).map(|got| got == want)
}

/// Accuracy of `(relation, answer, oracle answer)` triples. Description
/// samples are ignored. Unparseable answers count as wrong.
pub fn spatial_accuracy<'a>(items: impl IntoIterator<Item = (Relation, &'a str, &'a str)>) -> SpatialAccuracy {
    let mut counts: BTreeMap<Relation, CategoryCount> = BTreeMap::new();
    for (r, answer, oracle) in items {
        if r == Relation::Describe {
            continue;
        }
        let c = counts.entry(r).or_default();
        c.total += 1;
        match judge(r, answer, oracle) {
            Some(true) => c.correct += 1,
            Some(false) => {}
            None => c.unparseable += 1,
        }
    }
    SpatialAccuracy::from_counts(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    pub param_count: usize,
    pub model_bytes: usize,
    pub mean_latency_ms: f64,
    /// Samples per second.
    pub throughput: f64,
    pub runs: usize,
    pub reference_params: usize,
    /// `reference_params / param_count`.
    pub compression_ratio: f64,
}

/// Times greedy generation over `batch`, cycling through it for at least
/// `runs.max(20)` runs after one warm-up pass.
pub fn efficiency_report(
    model: &Model,
    batch: &[(VisionInput, Vec<u32>)],
    reference_params: usize,
    runs: usize,
    max_new_tokens: usize,
) -> Result<Efficiency> {
    let param_count = model.param_count();
    let model_bytes = Checkpoint::param_bytes(&model.params)?;
    let runs = runs.max(20);
    let mut mean_latency_ms = 0.0;
    if !batch.is_empty() {
        for (v, q) in batch {
            model.generate(v, q, max_new_tokens, 0)?;
        }
        let start = Instant::now();
        for i in 0..runs {
            let (v, q) = &batch[i % batch.len()];
            model.generate(v, q, max_new_tokens, 0)?;
        }
        mean_latency_ms = start.elapsed().as_secs_f64() * 1e3 / runs as f64;
    }
    Ok(Efficiency {
        param_count,
        model_bytes,
        mean_latency_ms,
        throughput: if mean_latency_ms > 0.0 { 1e3 / mean_latency_ms } else { 0.0 },
        runs,
        reference_params,
        compression_ratio: reference_params as f64 / param_count.max(1) as f64,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub mean_candidate_words: f64,
    pub mean_reference_words: f64,
    pub rouge_1_per_word: f64,
    /// Set when every candidate is empty.
    pub empty_candidates: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TextMetrics {
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub rouge_1: Prf,
    pub rouge_2: Prf,
    pub rouge_l: Prf,
    pub meteor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    #[serde(flatten)]
    pub text: TextMetrics,
    pub depth: DepthMetrics,
    pub spatial: SpatialAccuracy,
    pub teacher_spatial: SpatialAccuracy,
    pub spatial_teacher_relative: BTreeMap<Relation, f64>,
    pub efficiency: Option<Efficiency>,
    pub length: LengthStats,
}

/// ROUGE-1 F1 divided by mean candidate length; 0 and flagged when
/// candidates are empty.
pub fn length_normalized(rouge_1: f64, mean_candidate_words: f64) -> (f64, bool) {
    if mean_candidate_words <= 0.0 {
        (0.0, true)
    } else {
        (rouge_1 / mean_candidate_words, false)
    }
}

fn words(s: &str) -> Vec<String> {
    normalize(s)
}

fn mean_prf(xs: &[Prf]) -> Prf {
    let n = xs.len().max(1) as f64;
    Prf {
        precision: xs.iter().map(|p| p.precision).sum::<f64>() / n,
        recall: xs.iter().map(|p| p.recall).sum::<f64>() / n,
        f1: xs.iter().map(|p| p.f1).sum::<f64>() / n,
    }
}

/// Corpus BLEU and per-pair means of ROUGE and METEOR over
/// `(candidate, reference)` pairs, plus length statistics.
pub fn text_metrics(pairs: &[(String, String)]) -> (TextMetrics, LengthStats) {
    let tok: Vec<(Vec<String>, Vec<String>)> = pairs.iter().map(|(c, r)| (words(c), words(r))).collect();
    let view: Vec<(Vec<&str>, Vec<&str>)> = tok
        .iter()
        .map(|(c, r)| (c.iter().map(String::as_str).collect(), r.iter().map(String::as_str).collect()))
        .collect();
    let bleu_pairs: Vec<(Vec<&str>, Vec<Vec<&str>>)> = view.iter().map(|(c, r)| (c.clone(), vec![r.clone()])).collect();
    let n = view.len().max(1) as f64;
    let r1: Vec<Prf> = view.iter().map(|(c, r)| rouge_n(c, r, 1)).collect();
    let rouge_1 = mean_prf(&r1);
    let metrics = TextMetrics {
        bleu_1: corpus_bleu(&bleu_pairs, 1),
        bleu_2: corpus_bleu(&bleu_pairs, 2),
        bleu_3: corpus_bleu(&bleu_pairs, 3),
        bleu_4: corpus_bleu(&bleu_pairs, 4),
        rouge_1,
        rouge_2: mean_prf(&view.iter().map(|(c, r)| rouge_n(c, r, 2)).collect::<Vec<_>>()),
        rouge_l: mean_prf(&view.iter().map(|(c, r)| rouge_l(c, r)).collect::<Vec<_>>()),
        meteor: view.iter().map(|(c, r)| meteor(c, r)).sum::<f64>() / n,
    };
    let mean_c = view.iter().map(|(c, _)| c.len() as f64).sum::<f64>() / n;
    let mean_r = view.iter().map(|(_, r)| r.len() as f64).sum::<f64>() / n;
    let (per_word, empty) = length_normalized(rouge_1.f1, mean_c);
    let length =
        LengthStats { mean_candidate_words: mean_c, mean_reference_words: mean_r, rouge_1_per_word: per_word, empty_candidates: empty };
    (metrics, length)
}

/// One row of the side-by-side dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitativeRow {
    pub sample_id: usize,
    pub relation: Relation,
    pub question: String,
    pub reference_answer: String,
    pub teacher_answer: String,
    pub student_answer: String,
    pub bleu_1: f64,
    pub rouge_1_f1: f64,
    pub meteor: f64,
    pub correct: Option<bool>,
}

/// The teacher's answer: argmax of its soft targets, up to EOS.
pub fn teacher_answer(data: &Dataset, sample: &Sample) -> String {
    let ids: Vec<u32> = sample
        .soft_targets
        .rows()
        .into_iter()
        .map(|r| argmax(r.iter().copied()) as u32)
        .take_while(|&id| id != EOS)
        .collect();
    data.vocab.decode(&ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub max_new_tokens: usize,
    pub seed: u64,
    /// Generation runs for the efficiency record; 0 skips it.
    pub efficiency_runs: usize,
    pub reference_params: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { max_new_tokens: 24, seed: 0, efficiency_runs: 20, reference_params: 0 }
    }
}

struct SampleResult {
    row: QualitativeRow,
    depth: DepthAccumulator,
}

fn eval_sample(model: &Model, data: &Dataset, sample: &Sample, opts: &EvalOptions) -> Result<SampleResult> {
    let record = &data.scenes[sample.scene_index];
    let vision = VisionInput::from_views(&model.config, &record.views)?;
    let gen = model.generate(&vision, &sample.question_ids, opts.max_new_tokens, opts.seed)?;
    let student = data.vocab.decode(&gen);

    let mut depth = DepthAccumulator::default();
    let mut g = Graph::new();
    let (_, heads) = model.vision_graph(&mut g, &vision)?;
    let (h, w) = (model.config.render_height, model.config.render_width);
    for (v, view) in record.views.iter().enumerate() {
        let pred = g.value(heads.depth_scalar[v]).to_owned().into_shape_with_order((h, w)).map_err(|_| Error::ShapeMismatch {
            context: "depth head".into(),
            expected: vec![h, w],
            actual: vec![g.value(heads.depth_scalar[v]).len()],
        })?;
        depth.add(pred.view(), view.depth.view())?;
    }

    let reference = sample.qa.answer_text.clone();
    let (c, r) = (words(&student), words(&reference));
    let (c, r): (Vec<&str>, Vec<&str>) = (c.iter().map(String::as_str).collect(), r.iter().map(String::as_str).collect());
    let row = QualitativeRow {
        sample_id: sample.id,
        relation: sample.qa.relation,
        question: sample.qa.question_text.clone(),
        teacher_answer: teacher_answer(data, sample),
        bleu_1: bleu_n(&c, &[r.clone()], 1),
        rouge_1_f1: rouge_n(&c, &r, 1).f1,
        meteor: meteor(&c, &r),
        correct: if sample.qa.relation == Relation::Describe {
            None
        } else {
            Some(judge(sample.qa.relation, &student, &reference).unwrap_or(false))
        },
        student_answer: student,
        reference_answer: reference,
    };
    Ok(SampleResult { row, depth })
}

/// Evaluates `model` on `sample_ids`. Rows come back sorted by sample id,
/// and every reduction runs over that order.
pub fn evaluate_model(
    model: &Model,
    data: &Dataset,
    sample_ids: &[usize],
    opts: &EvalOptions,
) -> Result<(MetricsReport, Vec<QualitativeRow>)> {
    let mut ids = sample_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let results: Vec<SampleResult> =
        ids.par_iter().map(|&i| eval_sample(model, data, &data.samples[i], opts)).collect::<Result<_>>()?;
    let depth = results.iter().fold(DepthAccumulator::default(), |a, r| a.merge(&r.depth)).finish();
    let rows: Vec<QualitativeRow> = results.into_iter().map(|r| r.row).collect();

    let pairs: Vec<(String, String)> =
        rows.iter().map(|r| (r.student_answer.clone(), r.reference_answer.clone())).collect();
    let (text, length) = text_metrics(&pairs);
    let spatial = spatial_accuracy(rows.iter().map(|r| (r.relation, r.student_answer.as_str(), r.reference_answer.as_str())));
    let teacher_spatial =
        spatial_accuracy(rows.iter().map(|r| (r.relation, r.teacher_answer.as_str(), r.reference_answer.as_str())));
    let efficiency = if opts.efficiency_runs > 0 {
        let batch = ids
            .iter()
            .take(8)
            .map(|&i| {
                let s = &data.samples[i];
                Ok((VisionInput::from_views(&model.config, &data.scenes[s.scene_index].views)?, s.question_ids.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Some(efficiency_report(model, &batch, opts.reference_params, opts.efficiency_runs, opts.max_new_tokens)?)
    } else {
        None
    };
    let report = MetricsReport {
        n_samples: rows.len(),
        text,
        depth,
        spatial_teacher_relative: spatial.relative_to(&teacher_spatial),
        spatial,
        teacher_spatial,
        efficiency,
        length,
    };
    Ok((report, rows))
}
