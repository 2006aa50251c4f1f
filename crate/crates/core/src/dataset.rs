//! Turns a world and its labeled pairs into tokenized prompt samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{select_diverse_paths, NodeId};
use crate::prompt::{template_corpus, Answer, PhraseRegistry, PromptBuilder, PromptSample};
use crate::synth::{LabeledPair, World};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathConfig {
    /// Paths kept per sample after diversity filtering.
    pub max_paths: usize,
    pub max_edges: usize,
    pub num_walks: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self { max_paths: 2, max_edges: 3, num_walks: 8, gamma: 0.8, seed: 0 }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("paths.gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.max_edges == 0 {
            return Err(Error::InvalidConfig("paths.max_edges must be at least 1".into()));
        }
        Ok(())
    }
}

/// Vocabulary over the fixed templates and every node's rendered text.
pub fn build_vocab(world: &World, phrases: &PhraseRegistry, max_vocab: usize) -> Tokenizer {
    let mut corpus = template_corpus(phrases);
    corpus.extend(world.profiles.values().flat_map(|p| [p.render(), p.summary.clone()]));
    corpus.extend(world.jds.values().flat_map(|j| [j.render(), j.summary.clone()]));
    Tokenizer::fit(&corpus, max_vocab)
}

/// Samples walks from `candidate`, renders them, and keeps a diverse subset.
pub fn candidate_paths(
    world: &World,
    candidate: NodeId,
    phrases: &PhraseRegistry,
    tok: &Tokenizer,
    cfg: &PathConfig,
) -> Result<Vec<String>> {
    if cfg.max_paths == 0 {
        return Ok(Vec::new());
    }
    let mut walks = world.graph.sample_meta_paths(candidate, cfg.max_edges, cfg.num_walks, cfg.seed)?;
    let mut texts = Vec::with_capacity(walks.len());
    for w in &mut walks {
        let text = crate::prompt::render_meta_path_prompt(w, &world.profiles, &world.jds, phrases)?;
        w.tokens = tok.encode(&text).into_iter().collect();
        texts.push(text);
    }
    let kept = select_diverse_paths(&walks, cfg.gamma, cfg.max_paths);
    Ok(kept
        .iter()
        .map(|k| {
            let i = walks.iter().position(|w| w == k).expect("kept walk comes from the sampled set");
            texts[i].clone()
        })
        .collect())
}

/// Stable sample id: task, candidate and job ids.
pub fn sample_id(pair: &LabeledPair) -> String {
    let jobs: Vec<String> = pair.jobs.iter().map(|j| j.0.to_string()).collect();
    format!("{}-c{}-j{}", pair.task.name(), pair.candidate.0, jobs.join("-"))
}

/// One sample per labeled pair, with up to `cfg.max_paths` path prompts.
pub fn build_samples(
    world: &World,
    pairs: &[LabeledPair],
    phrases: &PhraseRegistry,
    tok: &Tokenizer,
    cfg: &PathConfig,
    context_len: usize,
) -> Result<Vec<PromptSample>> {
    cfg.validate()?;
    let builder = PromptBuilder::new(tok, context_len);
    let mut cache: std::collections::BTreeMap<NodeId, Vec<String>> = Default::default();
    let mut out = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let paths = match cache.get(&pair.candidate) {
            Some(p) => p.clone(),
            None => {
                let p = candidate_paths(world, pair.candidate, phrases, tok, cfg)?;
                cache.insert(pair.candidate, p.clone());
                p
            }
        };
        let profile = world.profiles.get(&pair.candidate).ok_or(Error::MissingNodeText(pair.candidate))?;
        let jd = |j: NodeId| world.jds.get(&j).ok_or(Error::MissingNodeText(j));
        let id = sample_id(pair);
        let sample = match pair.label {
            Answer::Yes | Answer::No => builder.build_pointwise(id, profile, jd(pair.jobs[0])?, paths, pair.label)?,
            Answer::A | Answer::B => {
                builder.build_pairwise(id, profile, jd(pair.jobs[0])?, jd(pair.jobs[1])?, paths, pair.label)?
            }
        };
        out.push(sample);
    }
    Ok(out)
}
