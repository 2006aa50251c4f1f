//! Path-count ablation and path-ordering bias experiments.
//!
//! An [`Experiment`] fixes the world, vocabulary, split and base model, and
//! trains each (path count, strategy) arm at most once.

use std::collections::BTreeMap;

use crate::augment::Strategy;
use crate::config::RunConfig;
use crate::dataset::{build_samples, build_vocab, PathConfig};
use crate::error::Result;
use crate::eval::{auc, population_std, split_dataset, EvalReport, ReportRow};
use crate::inference::{predict, predict_all};
use crate::model::{MicroLm, ModelConfig};
use crate::prompt::{PhraseRegistry, PromptSample};
use crate::synth::{make_task_datasets, LabeledPair, World};
use crate::tokenizer::Tokenizer;
use crate::trainer::{fine_tune, materialize, EpochLog, Trainable};

/// Every ordering of `0..n`, in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        // Next lexicographic permutation.
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).expect("a larger element exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
}

/// Probability for the sample under every ordering of its path prompts,
/// in [`permutations`] order.
pub fn ordering_predictions(
    model: &MicroLm<f64>,
    trainable: &Trainable<f64>,
    sample: &PromptSample,
    tok: &Tokenizer,
) -> Result<Vec<f64>> {
    let ctx = model.config().context_len;
    permutations(sample.paths.len())
        .into_iter()
        .map(|perm| {
            let reordered = sample.with_paths(perm.iter().map(|&i| sample.paths[i].clone()).collect(), tok, ctx)?;
            Ok(predict(model, trainable, &reordered)?.probability)
        })
        .collect()
}

pub struct TrainedArm {
    pub trainable: Trainable<f64>,
    pub log: Vec<EpochLog>,
}

pub struct Experiment<'a> {
    cfg: &'a RunConfig,
    world: &'a World,
    phrases: PhraseRegistry,
    tok: Tokenizer,
    model: MicroLm<f64>,
    train_pairs: Vec<LabeledPair>,
    test_pairs: Vec<LabeledPair>,
    samples: BTreeMap<usize, (Vec<PromptSample>, Vec<PromptSample>)>,
    arms: BTreeMap<(usize, Strategy), TrainedArm>,
}

impl<'a> Experiment<'a> {
    pub fn new(cfg: &'a RunConfig, world: &'a World) -> Result<Self> {
        cfg.validate()?;
        let phrases = PhraseRegistry::default();
        let tok = build_vocab(world, &phrases, cfg.model.vocab_size);
        let model = MicroLm::new(ModelConfig { vocab_size: tok.vocab_size(), ..cfg.model.clone() })?;
        let pairs = make_task_datasets(world, cfg.task, cfg.world.labeled_per_class, cfg.world.seed);
        let (train_pairs, test_pairs) = split_dataset(&pairs, &world.jds, &cfg.split)?;
        Ok(Self {
            cfg,
            world,
            phrases,
            tok,
            model,
            train_pairs,
            test_pairs,
            samples: BTreeMap::new(),
            arms: BTreeMap::new(),
        })
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tok
    }

    pub fn model(&self) -> &MicroLm<f64> {
        &self.model
    }

    /// Unaugmented `(train, test)` samples with up to `paths` path prompts.
    pub fn samples(&mut self, paths: usize) -> Result<&(Vec<PromptSample>, Vec<PromptSample>)> {
        if !self.samples.contains_key(&paths) {
            let pc = PathConfig { max_paths: paths, ..self.cfg.paths.clone() };
            let ctx = self.cfg.model.context_len;
            let train = build_samples(self.world, &self.train_pairs, &self.phrases, &self.tok, &pc, ctx)?;
            let test = build_samples(self.world, &self.test_pairs, &self.phrases, &self.tok, &pc, ctx)?;
            self.samples.insert(paths, (train, test));
        }
        Ok(&self.samples[&paths])
    }

    /// Trains the arm on first use; later calls return the cached result.
    pub fn arm(&mut self, paths: usize, strategy: Strategy) -> Result<&TrainedArm> {
        if !self.arms.contains_key(&(paths, strategy)) {
            let tc = crate::trainer::TrainConfig { strategy, ..self.cfg.train.clone() };
            let ctx = self.cfg.model.context_len;
            let (tok, model) = (self.tok.clone(), self.model.clone());
            let (train, _) = self.samples(paths)?;
            let mat = materialize(train, strategy, tc.shuffle_copies, tc.seed, &tok, ctx)?;
            let mut trainable = Trainable::init(&model, strategy, tc.lambda, tc.seed)?;
            let log = fine_tune(&model, &mut trainable, &mat, &tc, |_, _| Ok(()))?;
            self.arms.insert((paths, strategy), TrainedArm { trainable, log });
        }
        Ok(&self.arms[&(paths, strategy)])
    }

    fn test_set(&mut self, paths: usize, strategy: Strategy) -> Result<Vec<PromptSample>> {
        let mut test = self.samples(paths)?.1.clone();
        test.iter_mut().for_each(|s| s.use_selector = strategy.uses_selector());
        Ok(test)
    }

    /// AUC on the test split with paths in their sampled order.
    pub fn evaluate(&mut self, paths: usize, strategy: Strategy) -> Result<ReportRow> {
        let test = self.test_set(paths, strategy)?;
        let trainable = self.arm(paths, strategy)?.trainable.clone();
        let preds = predict_all(&self.model, &trainable, &test)?;
        let scores: Vec<f64> = preds.iter().map(|p| p.probability).collect();
        let labels: Vec<bool> = preds.iter().map(|p| p.label.is_positive()).collect();
        Ok(ReportRow {
            task: self.cfg.task,
            split: self.cfg.split.kind,
            strategy,
            path_count: paths,
            auc: auc(&scores, &labels)?,
            samples: test.len(),
            ordering_std: None,
        })
    }

    /// Scores every test sample under all orderings of its paths. Returns
    /// the mean over ordering indices of the AUC, and the mean per-sample
    /// standard deviation across orderings. A sample with `k` paths has
    /// `k!` orderings; ordering index `o` maps to its `o mod k!`-th one.
    pub fn evaluate_orderings(&mut self, paths: usize, strategy: Strategy) -> Result<ReportRow> {
        let test = self.test_set(paths, strategy)?;
        let trainable = self.arm(paths, strategy)?.trainable.clone();
        let per_sample: Vec<Vec<f64>> =
            test.iter().map(|s| ordering_predictions(&self.model, &trainable, s, &self.tok)).collect::<Result<_>>()?;
        let n_orders = per_sample.iter().map(Vec::len).max().unwrap_or(1);
        let labels: Vec<bool> = test.iter().map(|s| s.label.is_positive()).collect();
        let mut auc_sum = 0.0;
        for o in 0..n_orders {
            let scores: Vec<f64> = per_sample.iter().map(|p| p[o % p.len()]).collect();
            auc_sum += auc(&scores, &labels)?;
        }
        let std_mean = per_sample.iter().map(|p| population_std(p)).sum::<f64>() / per_sample.len().max(1) as f64;
        Ok(ReportRow {
            task: self.cfg.task,
            split: self.cfg.split.kind,
            strategy,
            path_count: paths,
            auc: auc_sum / n_orders as f64,
            samples: test.len(),
            ordering_std: Some(std_mean),
        })
    }
}

/// One unaugmented arm per requested path count.
pub fn run_path_ablation(exp: &mut Experiment<'_>, path_counts: &[usize]) -> Result<EvalReport> {
    let rows = path_counts.iter().map(|&n| exp.evaluate(n, Strategy::None)).collect::<Result<_>>()?;
    Ok(EvalReport { rows })
}

/// One arm per strategy at `path_count`, scored over all path orderings.
pub fn run_bias_experiment(exp: &mut Experiment<'_>, path_count: usize, strategies: &[Strategy]) -> Result<EvalReport> {
    let rows = strategies.iter().map(|&s| exp.evaluate_orderings(path_count, s)).collect::<Result<_>>()?;
    Ok(EvalReport { rows })
}
