//! Splits, AUC and evaluation reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::Strategy;
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::prompt::{JobDescription, Task};
use crate::synth::LabeledPair;

/// Rank-based AUC with average ranks for ties.
///
/// Computed on doubled ranks so the numerator stays an exact integer:
/// `(Σ 2·rank(pos) − P(P+1)) / (2·P·N)`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    let p = labels.iter().filter(|l| **l).count() as u128;
    let n = labels.len() as u128 - p;
    if p == 0 || n == 0 {
        return Err(Error::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1..=j share the doubled average rank i+1+j.
        let pos_in_group = idx[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        rank_sum2 += pos_in_group * (i as u128 + 1 + j as u128);
        i = j;
    }
    Ok((rank_sum2 - p * (p + 1)) as f64 / (2 * p * n) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    Random,
    OodPosition,
    OodJd,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Random, SplitKind::OodPosition, SplitKind::OodJd];

    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Random => "random",
            SplitKind::OodPosition => "ood-position",
            SplitKind::OodJd => "ood-jd",
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SplitKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown split {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub kind: SplitKind,
    /// Train records per test record.
    pub train_test_ratio: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { kind: SplitKind::Random, train_test_ratio: 5.0, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_test_ratio > 0.0 && self.train_test_ratio.is_finite()) {
            return Err(Error::InvalidConfig(format!("split.train_test_ratio must be positive, got {}", self.train_test_ratio)));
        }
        Ok(())
    }

    fn test_share(&self) -> f64 {
        1.0 / (1.0 + self.train_test_ratio)
    }
}

fn split_random(records: &[LabeledPair], spec: &SplitSpec) -> (Vec<LabeledPair>, Vec<LabeledPair>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Stratified by label within each user, so a user's training records
    // keep the same class balance as their test records.
    let mut by_user: BTreeMap<(NodeId, bool), Vec<&LabeledPair>> = BTreeMap::new();
    for r in records {
        by_user.entry((r.candidate, r.label.is_positive())).or_default().push(r);
    }
    let q = spec.test_share();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let mut seen = 0usize;
    for (_, mut recs) in by_user {
        recs.shuffle(&mut rng);
        // Cumulative rounding keeps every user near the ratio and the total on it.
        let before = (seen as f64 * q).round() as usize;
        seen += recs.len();
        let n_test = (seen as f64 * q).round() as usize - before;
        for (i, r) in recs.into_iter().enumerate() {
            if i < n_test {
                test.push(r.clone());
            } else {
                train.push(r.clone());
            }
        }
    }
    (train, test)
}

/// Holds out whole keys until the test side reaches its share. Records that
/// mix held-out and kept keys (pair-wise only) are dropped.
fn split_by_key(
    records: &[LabeledPair],
    spec: &SplitSpec,
    key: impl Fn(NodeId) -> Result<String>,
    what: &str,
) -> Result<(Vec<LabeledPair>, Vec<LabeledPair>)> {
    let keyed: Vec<Vec<String>> =
        records.iter().map(|r| r.jobs.iter().map(|&j| key(j)).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for ks in &keyed {
        for k in ks {
            *counts.entry(k.as_str()).or_default() += 1;
        }
    }
    if counts.len() < 2 {
        return Err(Error::InsufficientDiversity(format!("need at least 2 distinct {what}, found {}", counts.len())));
    }
    let mut keys: Vec<&str> = counts.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    keys.shuffle(&mut rng);
    let target = (records.len() as f64 * spec.test_share()).round() as usize;
    let mut held: BTreeSet<&str> = BTreeSet::new();
    let mut covered = 0;
    for k in &keys[..keys.len() - 1] {
        if covered >= target.max(1) {
            break;
        }
        held.insert(k);
        covered += counts[k];
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, ks) in records.iter().zip(&keyed) {
        let n_held = ks.iter().filter(|k| held.contains(k.as_str())).count();
        if n_held == ks.len() {
            test.push(r.clone());
        } else if n_held == 0 {
            train.push(r.clone());
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::InsufficientDiversity(format!("holding out {what} left one side empty")));
    }
    Ok((train, test))
}

/// Splits labeled records into `(train, test)`.
///
/// Random splits each user's records at the ratio, separately per class. The OOD kinds hold out
/// whole position titles or whole job ids, so the two sides share none;
/// users whose records all stay on the training side are simply absent from
/// the test set.
pub fn split_dataset(
    records: &[LabeledPair],
    jds: &BTreeMap<NodeId, JobDescription>,
    spec: &SplitSpec,
) -> Result<(Vec<LabeledPair>, Vec<LabeledPair>)> {
    spec.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidConfig("cannot split an empty record set".into()));
    }
    match spec.kind {
        SplitKind::Random => Ok(split_random(records, spec)),
        SplitKind::OodPosition => split_by_key(
            records,
            spec,
            |j| jds.get(&j).map(|d| d.position_title().to_string()).ok_or(Error::MissingNodeText(j)),
            "position titles",
        ),
        SplitKind::OodJd => split_by_key(records, spec, |j| Ok(j.0.to_string()), "job descriptions"),
    }
}

/// Population standard deviation `sqrt(mean((x − x̄)²))`.
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: Task,
    pub split: SplitKind,
    pub strategy: Strategy,
    pub path_count: usize,
    pub auc: f64,
    pub samples: usize,
    /// Mean per-sample prediction std across path orderings (bias runs only).
    pub ordering_std: Option<f64>,
}

pub const REPORT_HEADER: &str = "task,split,strategy,paths,auc,samples,ordering_std";

impl ReportRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{},{}",
            self.task.name(),
            self.split.name(),
            self.strategy.name(),
            self.path_count,
            self.auc,
            self.samples,
            self.ordering_std.map_or(String::new(), |s| format!("{s:.6}"))
        )
    }
}

impl fmt::Display for ReportRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<10} {:<13} {:<9} paths={} auc={:.4} n={}",
            self.task.name(),
            self.split.name(),
            self.strategy.name(),
            self.path_count,
            self.auc,
            self.samples
        )?;
        if let Some(s) = self.ordering_std {
            write!(f, " ordering_std={s:.5}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> String {
        self.rows.iter().map(|r| format!("{r}\n")).collect()
    }
}
