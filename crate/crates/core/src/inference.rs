//! Label-token probabilities for prompt samples.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MicroLm;
use crate::prompt::{Answer, PromptSample, Task};
use crate::augment::soft_select_forward;
use crate::scalar::{softmax_in_place, Scalar};
use crate::tokenizer::Tokenizer;
use crate::trainer::Trainable;

pub const PREDICTION_SCHEMA_VERSION: u32 = 1;

/// Scored sample: `probability` is the positive label's share of the two
/// label tokens' mass at the first answer position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub schema_version: u32,
    pub id: String,
    pub task: Task,
    pub probability: f64,
    /// Raw softmax probabilities of the positive and negative label tokens.
    pub positive_raw: f64,
    pub negative_raw: f64,
    pub label: Answer,
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} p={:.6}", self.id, self.task.name(), self.probability)
    }
}

fn label_pair(task: Task) -> (Answer, Answer) {
    match task {
        Task::PointWise => (Answer::Yes, Answer::No),
        Task::PairWise => (Answer::A, Answer::B),
    }
}

/// `p(pos) / (p(pos) + p(neg))` computed as a two-way softmax on the
/// label logits, so it survives both raw probabilities underflowing.
pub fn label_probability<T: Scalar>(logits: &[T], task: Task) -> f64 {
    let (pos, neg) = label_pair(task);
    let margin = (logits[neg.token_id()] - logits[pos.token_id()]).as_f64();
    1.0 / (1.0 + margin.exp())
}

/// Runs the prompt (everything before the label) and scores the answer.
pub fn predict<T: Scalar>(model: &MicroLm<T>, trainable: &Trainable<T>, sample: &PromptSample) -> Result<Prediction> {
    let mut emb = model.embed(sample.prompt_ids());
    if sample.use_selector {
        if let Some(params) = &trainable.selector {
            emb = soft_select_forward(&emb, &sample.path_spans, params)?.0;
        }
    }
    let fwd = model.forward(Some(&trainable.adapters), &emb, true)?;
    let logits = fwd.logits.row(fwd.logits.rows - 1);
    let (pos, neg) = label_pair(sample.task);
    let mut probs = logits.to_vec();
    softmax_in_place(&mut probs);
    let p_pos = probs[pos.token_id()].as_f64();
    let p_neg = probs[neg.token_id()].as_f64();
    Ok(Prediction {
        schema_version: PREDICTION_SCHEMA_VERSION,
        id: sample.id.clone(),
        task: sample.task,
        probability: label_probability(logits, sample.task),
        positive_raw: p_pos,
        negative_raw: p_neg,
        label: sample.label,
    })
}

pub fn predict_all<T: Scalar>(
    model: &MicroLm<T>,
    trainable: &Trainable<T>,
    samples: &[PromptSample],
) -> Result<Vec<Prediction>> {
    samples.iter().map(|s| predict(model, trainable, s)).collect()
}

/// The pair-wise sample with its two job descriptions exchanged and the
/// label flipped to match.
pub fn swapped_pair(sample: &PromptSample, tok: &Tokenizer, context_len: usize) -> Result<PromptSample> {
    if sample.task != Task::PairWise {
        return Err(Error::InvalidConfig("only pair-wise samples can be swapped".into()));
    }
    let label = if sample.label == Answer::A { Answer::B } else { Answer::A };
    let jds = vec![sample.jds[1].clone(), sample.jds[0].clone()];
    let mut s = PromptSample::assemble(
        tok,
        sample.id.clone(),
        sample.task,
        &sample.instruction,
        &sample.profile,
        sample.paths.clone(),
        jds,
        label,
        context_len,
    )?;
    s.use_selector = sample.use_selector;
    Ok(s)
}

/// Position bias of one pair-wise sample: `|p(A | swapped) − (1 − p(A))|`,
/// zero for a model that ignores presentation order.
pub fn swap_deviation<T: Scalar>(
    model: &MicroLm<T>,
    trainable: &Trainable<T>,
    sample: &PromptSample,
    tok: &Tokenizer,
) -> Result<f64> {
    let p = predict(model, trainable, sample)?.probability;
    let swapped = swapped_pair(sample, tok, model.config().context_len)?;
    let q = predict(model, trainable, &swapped)?.probability;
    Ok((q - (1.0 - p)).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{NO, OPTION_A, OPTION_B, YES};

    fn logits_from(probs: &[(usize, f64)], vocab: usize, shift: f64) -> Vec<f64> {
        let rest = 1.0 - probs.iter().map(|p| p.1).sum::<f64>();
        let others = (vocab - probs.len()) as f64;
        let mut l = vec![(rest / others).ln() + shift; vocab];
        for &(i, p) in probs {
            l[i] = p.ln() + shift;
        }
        l
    }

    #[test]
    fn renormalizes_over_the_label_pair() {
        let l = logits_from(&[(YES, 0.3), (NO, 0.1)], 16, 0.0);
        assert!((label_probability(&l, Task::PointWise) - 0.75).abs() < 1e-12);
        let l = logits_from(&[(OPTION_A, 0.2), (OPTION_B, 0.6)], 16, 0.0);
        assert!((label_probability(&l, Task::PairWise) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn invariant_to_logit_shift() {
        for shift in [-50.0, -1.5, 0.0, 3.0, 700.0] {
            let l = logits_from(&[(YES, 0.3), (NO, 0.1)], 16, shift);
            assert!((label_probability(&l, Task::PointWise) - 0.75).abs() < 1e-12, "shift {shift}");
        }
    }

    #[test]
    fn survives_underflowing_probabilities() {
        let mut l = vec![0.0; 16];
        l[9] = 2000.0;
        l[YES] = 1.0;
        l[NO] = -1.0;
        let p = label_probability(&l, Task::PointWise);
        assert!((p - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
    }
}
