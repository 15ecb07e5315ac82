//! Subcommands of the `hcot` binary. Each `cmd_*` function is usable on its
//! own; `run` dispatches parsed arguments to them.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hcot_core::ablation::{self, AblationBase, AblationRow, Sweep};
use hcot_core::config::RunConfig;
use hcot_core::dataset::Dataset;
use hcot_core::evaluator::{evaluate_model, teacher_answer, MetricsReport, QualitativeRow};
use hcot_core::losses::{LossMode, Task};
use hcot_core::model::{Model, VisionInput};
use hcot_core::trainer::{train, Checkpoint, RunDir, RunRecord, Trainer};

#[derive(Debug, Parser)]
#[command(name = "hcot", version, about = "Distill spatial reasoning into a compact student with hidden thinking tokens")]
pub struct Cli {
    /// Run configuration (TOML). Every field has a default.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a synthetic dataset with teacher signals.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a student on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a checkpoint on the validation split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Required unless `--teacher` is given.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score the teacher's own answers instead of the student's.
        #[arg(long)]
        teacher: bool,
        /// Directory for metrics.json and qualitative.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate an ablation grid.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// losses, k, or all.
        #[arg(long, default_value = "all")]
        sweep: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Answer one sample; with `--diagnostic`, also decode the thinking tokens.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Sample id from the manifest.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long)]
        diagnostic: bool,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Number of thinking tokens.
    #[arg(long)]
    pub k: Option<usize>,
    /// uncertainty or static.
    #[arg(long)]
    pub loss_mode: Option<String>,
    /// Task to leave out; repeatable.
    #[arg(long = "disable-loss")]
    pub disable_loss: Vec<String>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(k) = self.k {
            cfg.model.k = k;
        }
        if let Some(m) = &self.loss_mode {
            cfg.train.loss_mode = m.parse::<LossMode>()?;
        }
        for name in &self.disable_loss {
            let t: Task = name.parse()?;
            cfg.train.enabled_losses.remove(&t);
        }
        Ok(())
    }
}

/// Config from `path` (or defaults) plus the text to echo into run directories.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<(RunConfig, String)> {
    let (mut cfg, text) = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => {
            let c = RunConfig::default();
            let t = c.to_toml();
            (c, t)
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok((cfg, text))
}

fn echo_config(dir: &Path, text: &str, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), text)?;
    fs::write(dir.join("config.resolved.toml"), cfg.to_toml())?;
    Ok(())
}

fn load_data(dir: &Path) -> Result<Dataset> {
    Dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

pub fn cmd_generate(cfg: &RunConfig, text: &str, out: &Path) -> Result<Dataset> {
    let data = Dataset::generate(cfg.seed, &cfg.dataset)?;
    data.save(out).with_context(|| format!("writing dataset to {}", out.display()))?;
    echo_config(out, text, cfg)?;
    log::info!("{} samples over {} scenes written to {}", data.samples.len(), data.scenes.len(), out.display());
    Ok(data)
}

pub fn cmd_train(cfg: &RunConfig, text: &str, data_dir: &Path, out: &Path) -> Result<RunRecord> {
    let data = load_data(data_dir)?;
    let mc = cfg.model_for(&data.config, data.vocab.len());
    let model = Model::new(mc, cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg.train_for(), cfg.loss_for(&data.config))?;
    let run = RunDir::new(out)?;
    echo_config(out, text, cfg)?;
    let record = train(&mut trainer, &data, Some(&run))?;
    log::info!("best val loss {:.5} at epoch {}", record.best_val_loss, record.best_epoch);
    Ok(record)
}

/// Evaluates the student in `checkpoint`, or the teacher when `checkpoint`
/// is `None`, on the validation split.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    data_dir: &Path,
    out: Option<&Path>,
) -> Result<(MetricsReport, Vec<QualitativeRow>)> {
    let data = load_data(data_dir)?;
    let (_, val) = data.split();
    let (report, rows) = match checkpoint {
        Some(p) => {
            let ckpt = Checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
            ckpt.model_config.check_data(&data.config, data.vocab.len())?;
            let model = ckpt.model();
            let opts = cfg.eval.options(cfg.seed, model.param_count());
            evaluate_model(&model, &data, &val, &opts)?
        }
        None => teacher_report(&data, &val),
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
        let mut lines = String::new();
        for r in &rows {
            lines.push_str(&serde_json::to_string(r)?);
            lines.push('\n');
        }
        fs::write(dir.join("qualitative.jsonl"), lines)?;
    }
    Ok((report, rows))
}

/// The report the teacher's own answers would get: text and spatial
/// metrics only.
fn teacher_report(data: &Dataset, ids: &[usize]) -> (MetricsReport, Vec<QualitativeRow>) {
    use hcot_core::evaluator::{judge, spatial_accuracy, text_metrics};
    use hcot_core::scene::Relation;
    let rows: Vec<QualitativeRow> = ids
        .iter()
        .map(|&i| {
            let s = &data.samples[i];
            let answer = teacher_answer(data, s);
            let reference = s.qa.answer_text.clone();
            QualitativeRow {
                sample_id: s.id,
                relation: s.qa.relation,
                question: s.qa.question_text.clone(),
                teacher_answer: answer.clone(),
                correct: (s.qa.relation != Relation::Describe)
                    .then(|| judge(s.qa.relation, &answer, &reference).unwrap_or(false)),
                bleu_1: 0.0,
                rouge_1_f1: 0.0,
                meteor: 0.0,
                student_answer: answer,
                reference_answer: reference,
            }
        })
        .collect();
    let pairs: Vec<(String, String)> = rows.iter().map(|r| (r.student_answer.clone(), r.reference_answer.clone())).collect();
    let (text, length) = text_metrics(&pairs);
    let spatial = spatial_accuracy(rows.iter().map(|r| (r.relation, r.student_answer.as_str(), r.reference_answer.as_str())));
    let report = MetricsReport {
        n_samples: rows.len(),
        text,
        depth: Default::default(),
        spatial_teacher_relative: spatial.relative_to(&spatial),
        teacher_spatial: spatial.clone(),
        spatial,
        efficiency: None,
        length,
    };
    (report, rows)
}

pub fn cmd_ablate(cfg: &RunConfig, text: &str, data_dir: &Path, out: &Path, sweep: Sweep) -> Result<Vec<Vec<AblationRow>>> {
    let data = load_data(data_dir)?;
    echo_config(out, text, cfg)?;
    let mc = cfg.model_for(&data.config, data.vocab.len());
    let base = AblationBase {
        eval: cfg.eval.options(cfg.seed, 0),
        model: mc.clone(),
        train: cfg.train_for(),
        loss: cfg.loss_for(&data.config),
    };
    let mut tables = Vec::new();
    if matches!(sweep, Sweep::Losses | Sweep::All) {
        let rows = ablation::ablate(&base, &data, &ablation::loss_rows(mc.k), Some(&out.join("runs/losses")))?;
        ablation::write_table(out, "ablation_losses", &rows)?;
        tables.push(rows);
    }
    if matches!(sweep, Sweep::K | Sweep::All) {
        let rows = ablation::ablate(&base, &data, &ablation::k_rows(), Some(&out.join("runs/k")))?;
        ablation::write_table(out, "ablation_k", &rows)?;
        tables.push(rows);
    }
    Ok(tables)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnosis {
    pub question: String,
    pub answer: String,
    /// Decoded thinking tokens, present only in diagnostic mode.
    pub thinking: Option<Vec<String>>,
}

impl Diagnosis {
    /// Only the answer line unless thinking tokens were decoded; then one
    /// `T<i>` line per token followed by the answer.
    pub fn render(&self) -> String {
        match &self.thinking {
            None => format!("{}\n", self.answer),
            Some(toks) => {
                let mut s = format!("question: {}\n", self.question);
                for (i, t) in toks.iter().enumerate() {
                    s.push_str(&format!("T{}\t{}\n", i + 1, t));
                }
                s.push_str(&format!("answer: {}\n", self.answer));
                s
            }
        }
    }
}

pub fn cmd_diagnose(cfg: &RunConfig, checkpoint: &Path, data_dir: &Path, sample: usize, diagnostic: bool) -> Result<Diagnosis> {
    let data = load_data(data_dir)?;
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    ckpt.model_config.check_data(&data.config, data.vocab.len())?;
    let model = ckpt.model();
    let Some(s) = data.samples.get(sample) else {
        bail!("sample {sample} out of range (dataset has {})", data.samples.len());
    };
    let vision = VisionInput::from_views(&model.config, &data.scenes[s.scene_index].views)?;
    let ids = model.generate(&vision, &s.question_ids, cfg.eval.max_new_tokens, cfg.seed)?;
    let answer = data.vocab.decode(&ids);
    let thinking = if diagnostic {
        let t = model.decode_thinking(&vision, &s.question_ids)?;
        Some(t.iter().map(|&id| data.vocab.decode(&[id])).map(|w| if w.is_empty() { "<special>".into() } else { w }).collect())
    } else {
        None
    };
    Ok(Diagnosis { question: s.qa.question_text.clone(), answer, thinking })
}

pub fn run(cli: Cli) -> Result<()> {
    let (mut cfg, text) = load_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Generate { out } => {
            cmd_generate(&cfg, &text, &out)?;
        }
        Command::Train { data, out, overrides } => {
            overrides.apply(&mut cfg)?;
            let record = cmd_train(&cfg, &text, &data, &out)?;
            println!("{}", serde_json::to_string_pretty(&record)?);
        }
        Command::Eval { data, checkpoint, teacher, out } => {
            let ckpt = match (checkpoint, teacher) {
                (_, true) => None,
                (Some(c), false) => Some(c),
                (None, false) => bail!("--checkpoint is required unless --teacher is given"),
            };
            let (report, _) = cmd_eval(&cfg, ckpt.as_deref(), &data, out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Ablate { data, out, sweep, overrides } => {
            overrides.apply(&mut cfg)?;
            let sweep: Sweep = sweep.parse()?;
            for rows in cmd_ablate(&cfg, &text, &data, &out, sweep)? {
                print!("{}", ablation::to_markdown(&rows));
            }
        }
        Command::Diagnose { checkpoint, data, sample, diagnostic } => {
            print!("{}", cmd_diagnose(&cfg, &checkpoint, &data, sample, diagnostic)?.render());
        }
    }
    Ok(())
}
