//! On-disk dataset: a line-delimited manifest, a vocabulary file, and one
//! scene JSON plus one tensor container per scene.
//!
//! ```text
//! <dir>/dataset.json              seed, config, scene counts
//! <dir>/manifest.jsonl            one record per sample
//! <dir>/vocab.txt                 one token per line, line index = id
//! <dir>/scenes/scene_NNNNN.json   SceneGraph
//! <dir>/scenes/scene_NNNNN.safetensors
//! ```
//!
//! Scene containers hold `F32` little-endian arrays named
//! `view{v}.features` (H, W, C), `view{v}.depth` (H, W),
//! `teacher.view{v}.spatial` (rows, cols, channels),
//! `teacher.view{v}.depth_bins` (H, W, B), `teacher.det_class_probs`,
//! `teacher.det_boxes`, `teacher.rel_lr`, `teacher.rel_ab`, and
//! `teacher.sample{id}.soft_logits` (|A|, vocab) for each sample of the scene.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayD, Dimension, IxDyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{Precision, TensorFile};
use crate::error::{Error, IoContext, Result};
use crate::scene::{
    answer_signal, generate_scene, make_qa, render_views, scene_seed, scene_signal, DatasetConfig, QaSample, Relation,
    SceneGraph, SceneSignal, TeacherConfig, TeacherSignal, ViewRender,
};
use crate::tokenizer::Vocab;

pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub scene: SceneGraph,
    pub views: Vec<ViewRender>,
    pub signal: Arc<SceneSignal>,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: usize,
    pub scene_index: usize,
    pub qa: QaSample,
    /// `[BOS, question words, EOS]`
    pub question_ids: Vec<u32>,
    /// Answer words then EOS.
    pub answer_ids: Vec<u32>,
    pub soft_targets: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub seed: u64,
    pub config: DatasetConfig,
    pub vocab: Vocab,
    pub scenes: Vec<SceneRecord>,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub sample_id: usize,
    pub scene_id: usize,
    pub split: String,
    /// `<container path>#view<v>` references, relative to the dataset directory.
    pub views: Vec<String>,
    pub question_text: String,
    pub answer_text: String,
    pub relation: Relation,
    pub referenced_object_ids: Vec<u32>,
    pub answer_token_ids: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetMeta {
    seed: u64,
    n_scenes: usize,
    n_samples: usize,
    config: DatasetConfig,
}

fn round32<D: Dimension>(a: &mut ndarray::Array<f64, D>) {
    a.mapv_inplace(|v| v as f32 as f64);
}

fn scene_stem(index: usize) -> String {
    format!("scene_{index:05}")
}

impl Dataset {
    /// Builds scenes, questions and teacher signals. Pure in `(seed, config)`;
    /// scenes are generated in parallel and collected in index order.
    /// Float payloads are rounded to `f32` so the in-memory dataset equals
    /// what [`Dataset::load`] returns.
    pub fn generate(seed: u64, config: &DatasetConfig) -> Result<Self> {
        config.validate()?;
        let teacher_cfg = TeacherConfig::from_dataset(config);
        let thresholds = config.thresholds();
        let chunk = 64;
        let mut scenes: Vec<(SceneRecord, Vec<QaSample>)> = Vec::new();
        let mut n_qa = 0;
        while n_qa < config.num_samples {
            let start = scenes.len();
            let batch: Vec<(SceneRecord, Vec<QaSample>)> = (start..start + chunk)
                .into_par_iter()
                .map(|i| {
                    let s = scene_seed(seed, i as u64);
                    let scene = generate_scene(s, config)?;
                    let mut views = render_views(&scene, config.n_views, config.render_height, config.render_width);
                    for v in &mut views {
                        round32(&mut v.features);
                        round32(&mut v.depth);
                    }
                    let mut signal = scene_signal(&scene, &views, &teacher_cfg);
                    round_signal(&mut signal);
                    let qa = make_qa(&scene, i, s, &thresholds);
                    Ok((SceneRecord { scene, views, signal: Arc::new(signal) }, qa))
                })
                .collect::<Result<_>>()?;
            for item in batch {
                if n_qa >= config.num_samples {
                    break;
                }
                n_qa += item.1.len();
                scenes.push(item);
            }
        }

        let qa_all: Vec<QaSample> =
            scenes.iter().flat_map(|(_, qa)| qa.iter().cloned()).take(config.num_samples).collect();
        let corpus: Vec<&str> =
            qa_all.iter().flat_map(|q| [q.question_text.as_str(), q.answer_text.as_str()]).collect();
        let vocab = Vocab::build(&corpus);

        let samples = qa_all
            .into_iter()
            .enumerate()
            .map(|(id, qa)| {
                let (answer_ids, mut soft_targets) = answer_signal(&qa, &vocab, config.label_smoothing)?;
                round32(&mut soft_targets);
                let question_ids = vocab.encode(&qa.question_text);
                Ok(Sample { id, scene_index: qa.scene_id, qa, question_ids, answer_ids, soft_targets })
            })
            .collect::<Result<Vec<_>>>()?;
        let used = samples.last().map_or(0, |s| s.scene_index + 1);
        let scenes = scenes.into_iter().take(used).map(|(r, _)| r).collect();
        Ok(Self { seed, config: config.clone(), vocab, scenes, samples })
    }

    pub fn n_train_scenes(&self) -> usize {
        ((self.scenes.len() as f64) * TRAIN_FRACTION).round() as usize
    }

    /// Sample indices split 80/20 by scene so no scene appears in both halves.
    pub fn split(&self) -> (Vec<usize>, Vec<usize>) {
        let cut = self.n_train_scenes();
        self.samples.iter().map(|s| s.id).partition(|&i| self.samples[i].scene_index < cut)
    }

    pub fn teacher(&self, sample: &Sample) -> TeacherSignal {
        TeacherSignal {
            answer_token_ids: sample.answer_ids.clone(),
            soft_logits: sample.soft_targets.clone(),
            scene: Arc::clone(&self.scenes[sample.scene_index].signal),
        }
    }

    pub fn manifest(&self) -> Vec<ManifestRecord> {
        let cut = self.n_train_scenes();
        self.samples
            .iter()
            .map(|s| {
                let container = format!("scenes/{}.safetensors", scene_stem(s.scene_index));
                ManifestRecord {
                    sample_id: s.id,
                    scene_id: s.scene_index,
                    split: if s.scene_index < cut { "train" } else { "val" }.to_string(),
                    views: (0..self.config.n_views).map(|v| format!("{container}#view{v}")).collect(),
                    question_text: s.qa.question_text.clone(),
                    answer_text: s.qa.answer_text.clone(),
                    relation: s.qa.relation,
                    referenced_object_ids: s.qa.referenced_object_ids.clone(),
                    answer_token_ids: s.answer_ids.clone(),
                }
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let scenes_dir = dir.join("scenes");
        fs::create_dir_all(&scenes_dir).at(&scenes_dir)?;
        let meta = DatasetMeta {
            seed: self.seed,
            n_scenes: self.scenes.len(),
            n_samples: self.samples.len(),
            config: self.config.clone(),
        };
        let meta_path = dir.join("dataset.json");
        fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).at(&meta_path)?;
        self.vocab.save(&dir.join("vocab.txt"))?;

        let manifest_path = dir.join("manifest.jsonl");
        let mut out = Vec::new();
        for rec in self.manifest() {
            serde_json::to_writer(&mut out, &rec)?;
            out.push(b'\n');
        }
        fs::File::create(&manifest_path).and_then(|mut f| f.write_all(&out)).at(&manifest_path)?;

        self.scenes.par_iter().enumerate().try_for_each(|(i, rec)| {
            let json_path = scenes_dir.join(format!("{}.json", scene_stem(i)));
            fs::write(&json_path, serde_json::to_string(&rec.scene)?).at(&json_path)?;
            let mut file = TensorFile::new();
            for (v, view) in rec.views.iter().enumerate() {
                file.insert(format!("view{v}.features"), view.features.clone().into_dyn());
                file.insert(format!("view{v}.depth"), view.depth.clone().into_dyn());
                let [sh, sw, sc] = self.config.spatial_shape;
                file.insert(format!("teacher.view{v}.spatial"), reshape(&rec.signal.spatial_features[v], &[sh, sw, sc]));
                let (h, w) = view.depth.dim();
                file.insert(
                    format!("teacher.view{v}.depth_bins"),
                    reshape(&rec.signal.depth_bin_dist[v], &[h, w, self.config.depth_bins]),
                );
            }
            file.insert2("teacher.det_class_probs", &rec.signal.det_class_probs);
            file.insert2("teacher.det_boxes", &rec.signal.det_boxes);
            file.insert2("teacher.rel_lr", &rec.signal.rel_lr);
            file.insert2("teacher.rel_ab", &rec.signal.rel_ab);
            for s in self.samples.iter().filter(|s| s.scene_index == i) {
                file.insert2(format!("teacher.sample{}.soft_logits", s.id), &s.soft_targets);
            }
            file.metadata.insert("scene_id".into(), i.to_string());
            file.write(&scenes_dir.join(format!("{}.safetensors", scene_stem(i))), Precision::F32)
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("dataset.json");
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(&meta_path).at(&meta_path)?)?;
        let vocab = Vocab::load(&dir.join("vocab.txt"))?;
        let manifest_path = dir.join("manifest.jsonl");
        let reader = BufReader::new(fs::File::open(&manifest_path).at(&manifest_path)?);
        let mut records = Vec::new();
        for line in reader.lines() {
            let line = line.at(&manifest_path)?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str::<ManifestRecord>(&line)?);
            }
        }

        let cfg = &meta.config;
        let teacher_cfg = TeacherConfig::from_dataset(cfg);
        let loaded: Vec<(SceneRecord, TensorFile)> = (0..meta.n_scenes)
            .into_par_iter()
            .map(|i| {
                let json_path = dir.join("scenes").join(format!("{}.json", scene_stem(i)));
                let scene: SceneGraph = serde_json::from_str(&fs::read_to_string(&json_path).at(&json_path)?)?;
                let file = TensorFile::read(&dir.join("scenes").join(format!("{}.safetensors", scene_stem(i))))?;
                let fresh = render_views(&scene, cfg.n_views, cfg.render_height, cfg.render_width);
                let mut views = Vec::with_capacity(cfg.n_views);
                let mut spatial = Vec::new();
                let mut depth_bins = Vec::new();
                for (v, template) in fresh.into_iter().enumerate() {
                    let features: Array3<f64> = to_fixed(file.get(&format!("view{v}.features"))?)?;
                    let depth: Array2<f64> = to_fixed(file.get(&format!("view{v}.depth"))?)?;
                    views.push(ViewRender { view_id: v, features, depth, camera: template.camera });
                    spatial.push(file.get2(&format!("teacher.view{v}.spatial"))?);
                    depth_bins.push(file.get2(&format!("teacher.view{v}.depth_bins"))?);
                }
                let b = teacher_cfg.depth_bins;
                let total: usize = depth_bins.iter().map(|d| d.nrows()).sum();
                let mut pooled = Array2::zeros((1, b));
                for d in &depth_bins {
                    for row in d.outer_iter() {
                        for k in 0..b {
                            pooled[[0, k]] += row[k];
                        }
                    }
                }
                pooled.mapv_inplace(|x| x / total.max(1) as f64);
                round32(&mut pooled);
                let signal = SceneSignal {
                    spatial_features: spatial,
                    depth_bin_dist: depth_bins,
                    pooled_depth_bins: pooled,
                    det_class_probs: file.get2("teacher.det_class_probs")?,
                    det_boxes: file.get2("teacher.det_boxes")?,
                    rel_lr: file.get2("teacher.rel_lr")?,
                    rel_ab: file.get2("teacher.rel_ab")?,
                };
                Ok((SceneRecord { scene, views, signal: Arc::new(signal) }, file))
            })
            .collect::<Result<_>>()?;

        let samples = records
            .iter()
            .map(|r| {
                let file = &loaded[r.scene_id].1;
                Ok(Sample {
                    id: r.sample_id,
                    scene_index: r.scene_id,
                    qa: QaSample {
                        scene_id: r.scene_id,
                        question_text: r.question_text.clone(),
                        answer_text: r.answer_text.clone(),
                        relation: r.relation,
                        referenced_object_ids: r.referenced_object_ids.clone(),
                    },
                    question_ids: vocab.encode(&r.question_text),
                    answer_ids: r.answer_token_ids.clone(),
                    soft_targets: file.get2(&format!("teacher.sample{}.soft_logits", r.sample_id))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let scenes = loaded.into_iter().map(|(r, _)| r).collect();
        Ok(Self { seed: meta.seed, config: meta.config, vocab, scenes, samples })
    }
}

/// Recomputes the pooled depth-bin distribution the way `load` does, so
/// generated and loaded datasets agree bit for bit.
fn round_signal(s: &mut SceneSignal) {
    s.spatial_features.iter_mut().for_each(round32);
    s.depth_bin_dist.iter_mut().for_each(round32);
    let b = s.pooled_depth_bins.ncols();
    let total: usize = s.depth_bin_dist.iter().map(|d| d.nrows()).sum();
    let mut pooled = Array2::zeros((1, b));
    for d in &s.depth_bin_dist {
        for row in d.outer_iter() {
            for k in 0..b {
                pooled[[0, k]] += row[k];
            }
        }
    }
    pooled.mapv_inplace(|x| x / total.max(1) as f64);
    round32(&mut pooled);
    s.pooled_depth_bins = pooled;
    round32(&mut s.det_class_probs);
    round32(&mut s.det_boxes);
    round32(&mut s.rel_lr);
    round32(&mut s.rel_ab);
}

fn reshape(m: &Array2<f64>, shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_shape_vec(IxDyn(shape), m.iter().copied().collect()).expect("reshape for container")
}

fn to_fixed<D: Dimension>(a: &ArrayD<f64>) -> Result<ndarray::Array<f64, D>> {
    a.clone().into_dimensionality::<D>().map_err(|e| Error::Container(e.to_string()))
}
