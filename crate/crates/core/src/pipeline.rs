//! File-level commands: synthesize a world, prepare samples, train, evaluate
//! and run the ablations. Every command writes the effective configuration
//! into its output directory as `config.toml`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::config::RunConfig;
use crate::dataset::{build_samples, build_vocab};
use crate::error::{Error, Result};
use crate::eval::{auc, split_dataset, EvalReport, ReportRow};
use crate::experiment::{run_bias_experiment, run_path_ablation, Experiment};
use crate::inference::{predict_all, Prediction};
use crate::model::{MicroLm, ModelConfig};
use crate::prompt::{PhraseRegistry, PromptSample, SampleRecord};
use crate::records::{load_world, read_jsonl, save_world, to_jsonl};
use crate::synth::{generate_world, make_task_datasets, World};
use crate::tokenizer::Tokenizer;
use crate::trainer::{fine_tune, materialize, sample_loss, EpochLog, Trainable, TRAIN_LOG_HEADER};

pub const CONFIG_FILE: &str = "config.toml";
pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_FILE: &str = "report.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

fn start_output(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_toml())?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

/// Record counts of a synthesized world, one per written file plus a
/// breakdown of interactions by edge kind.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSummary {
    pub profiles: usize,
    pub jds: usize,
    pub interactions: usize,
    pub labels: usize,
    pub positive_labels: usize,
    pub interactions_by_kind: BTreeMap<String, usize>,
}

impl SynthSummary {
    pub fn of(world: &World) -> Self {
        let mut by_kind = BTreeMap::new();
        for e in world.graph.edges() {
            *by_kind.entry(e.kind.to_string()).or_default() += 1;
        }
        Self {
            profiles: world.profiles.len(),
            jds: world.jds.len(),
            interactions: world.graph.edges().len(),
            labels: world.labels.len(),
            positive_labels: world.labels.iter().filter(|l| l.positive).count(),
            interactions_by_kind: by_kind,
        }
    }
}

impl fmt::Display for SynthSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "profiles={} jds={} interactions={} labels={} positive_labels={}",
            self.profiles, self.jds, self.interactions, self.labels, self.positive_labels
        )?;
        for (k, n) in &self.interactions_by_kind {
            write!(f, " {k}={n}")?;
        }
        Ok(())
    }
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<SynthSummary> {
    start_output(cfg, out)?;
    let world = generate_world(&cfg.world)?;
    save_world(&world, out)?;
    Ok(SynthSummary::of(&world))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PrepareSummary {
    pub vocab: usize,
    pub train: usize,
    pub test: usize,
}

impl fmt::Display for PrepareSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "vocab={} train={} test={}", self.vocab, self.train, self.test)
    }
}

/// Fits the vocabulary, builds the task dataset, splits it and renders
/// both sides with `paths.max_paths` path prompts per sample.
pub fn prepare_world(cfg: &RunConfig, world: &World) -> Result<(Tokenizer, Vec<PromptSample>, Vec<PromptSample>)> {
    cfg.validate()?;
    let phrases = PhraseRegistry::default();
    let tok = build_vocab(world, &phrases, cfg.model.vocab_size);
    let pairs = make_task_datasets(world, cfg.task, cfg.world.labeled_per_class, cfg.world.seed);
    let (train_pairs, test_pairs) = split_dataset(&pairs, &world.jds, &cfg.split)?;
    let ctx = cfg.model.context_len;
    let selector = cfg.train.strategy.uses_selector();
    let mut train = build_samples(world, &train_pairs, &phrases, &tok, &cfg.paths, ctx)?;
    let mut test = build_samples(world, &test_pairs, &phrases, &tok, &cfg.paths, ctx)?;
    train.iter_mut().chain(test.iter_mut()).for_each(|s| s.use_selector = selector);
    Ok((tok, train, test))
}

pub fn prepare(cfg: &RunConfig, world_dir: &Path, out: &Path) -> Result<PrepareSummary> {
    start_output(cfg, out)?;
    let world = load_world(world_dir)?;
    let (tok, train, test) = prepare_world(cfg, &world)?;
    write_text(&out.join(TOKENIZER_FILE), &serde_json::to_string(&tok)?)?;
    let records = |s: &[PromptSample]| s.iter().map(PromptSample::to_record).collect::<Vec<_>>();
    write_text(&out.join(TRAIN_FILE), &to_jsonl(&records(&train))?)?;
    write_text(&out.join(TEST_FILE), &to_jsonl(&records(&test))?)?;
    Ok(PrepareSummary { vocab: tok.vocab_size(), train: train.len(), test: test.len() })
}

pub fn load_tokenizer(path: &Path) -> Result<Tokenizer> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Reads a samples file and re-tokenizes every record.
pub fn load_samples(path: &Path, tok: &Tokenizer, context_len: usize) -> Result<Vec<PromptSample>> {
    let recs: Vec<SampleRecord> = read_jsonl(path)?;
    recs.iter().map(|r| PromptSample::from_record(r, tok, context_len)).collect()
}

/// Mean loss over `samples`, in order.
pub fn mean_loss(model: &MicroLm<f64>, trainable: &Trainable<f64>, samples: &[PromptSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("cannot average a loss over no samples".into()));
    }
    let mut total = 0.0;
    for s in samples {
        total += sample_loss(model, trainable, s)?;
    }
    Ok(total / samples.len() as f64)
}

pub fn train_log_csv(log: &[EpochLog]) -> String {
    let mut out = format!("{TRAIN_LOG_HEADER}\n");
    for e in log {
        out.push_str(&e.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    /// Mean loss of the trained parameters over the unaugmented training set.
    pub final_loss: f64,
}

pub fn train(cfg: &RunConfig, data_dir: &Path, out: &Path) -> Result<TrainOutcome> {
    start_output(cfg, out)?;
    let tok = load_tokenizer(&data_dir.join(TOKENIZER_FILE))?;
    let ctx = cfg.model.context_len;
    let samples = load_samples(&data_dir.join(TRAIN_FILE), &tok, ctx)?;
    let model = MicroLm::new(ModelConfig { vocab_size: tok.vocab_size(), ..cfg.model.clone() })?;
    let tc = &cfg.train;
    let mut trainable = Trainable::init(&model, tc.strategy, tc.lambda, tc.seed)?;
    let mat = materialize(&samples, tc.strategy, tc.shuffle_copies, tc.seed, &tok, ctx)?;
    let log = fine_tune(&model, &mut trainable, &mat, tc, |_, _| Ok(()))?;
    write_text(&out.join(TRAIN_LOG_FILE), &train_log_csv(&log))?;
    Checkpoint::new(&model, tc, &trainable, &tok).save(&out.join(CHECKPOINT_FILE))?;
    let final_loss = mean_loss(&model, &trainable, &samples)?;
    Ok(TrainOutcome { log, final_loss })
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub predictions: Vec<Prediction>,
}

/// Scores the prepared test split. Row labels (task, split, path count)
/// come from the configuration echoed into `data_dir`.
pub fn eval(cfg: &RunConfig, checkpoint: &Path, data_dir: &Path, out: &Path) -> Result<EvalOutcome> {
    start_output(cfg, out)?;
    let prepared = RunConfig::load(&data_dir.join(CONFIG_FILE))?;
    let ck: Checkpoint<f64> = Checkpoint::load(checkpoint)?;
    let strategy = ck.train.strategy;
    let (model, trainable, tok) = ck.into_parts();
    let mut test = load_samples(&data_dir.join(TEST_FILE), &tok, model.config().context_len)?;
    test.iter_mut().for_each(|s| s.use_selector = strategy.uses_selector());
    let predictions = predict_all(&model, &trainable, &test)?;
    let scores: Vec<f64> = predictions.iter().map(|p| p.probability).collect();
    let labels: Vec<bool> = predictions.iter().map(|p| p.label.is_positive()).collect();
    let report = EvalReport {
        rows: vec![ReportRow {
            task: prepared.task,
            split: prepared.split.kind,
            strategy,
            path_count: prepared.paths.max_paths,
            auc: auc(&scores, &labels)?,
            samples: test.len(),
            ordering_std: None,
        }],
    };
    write_text(&out.join(PREDICTIONS_FILE), &to_jsonl(&predictions)?)?;
    write_text(&out.join(REPORT_FILE), &report.to_csv())?;
    Ok(EvalOutcome { report, predictions })
}

/// Path-count ablation followed by the ordering-bias runs, on a world
/// generated from `cfg.world`. Rows: one per path count, then one per
/// strategy.
pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<EvalReport> {
    start_output(cfg, out)?;
    let world = generate_world(&cfg.world)?;
    let mut exp = Experiment::new(cfg, &world)?;
    let mut report = run_path_ablation(&mut exp, &cfg.ablation.path_counts)?;
    report.rows.extend(run_bias_experiment(&mut exp, cfg.ablation.bias_path_count, &cfg.ablation.strategies)?.rows);
    write_atomic(&out.join(ABLATION_FILE), report.to_csv().as_bytes())?;
    Ok(report)
}
