//! Adapter fine-tuning: per-sample gradients, Adam, and the epoch loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, check_lambda, soft_select_backward, soft_select_forward, SelectorParams, Strategy};
use crate::error::{Error, Result};
use crate::model::{LoraSet, MicroLm};
use crate::prompt::PromptSample;
use crate::scalar::Scalar;
use crate::tensor::Matrix;
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub strategy: Strategy,
    /// Orderings per sample for shuffle augmentation.
    pub shuffle_copies: usize,
    pub lambda: f64,
    /// Stop selector gradients from flowing into the pooled path embeddings.
    pub detach_pooled: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            epochs: 3,
            batch_size: 8,
            strategy: Strategy::None,
            shuffle_copies: 2,
            lambda: 0.25,
            detach_pooled: false,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("train.learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("train.epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be at least 1".into());
        }
        if self.shuffle_copies == 0 {
            return bad("train.shuffle_copies must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        check_lambda(self.lambda)
    }
}

/// Everything fine-tuning updates. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trainable<T> {
    pub adapters: LoraSet<T>,
    pub selector: Option<SelectorParams<T>>,
}

impl<T: Scalar> Trainable<T> {
    /// Fresh adapters, plus a zero-initialised selector when the strategy uses one.
    pub fn init(model: &MicroLm<T>, strategy: Strategy, lambda: f64, seed: u64) -> Result<Self> {
        let selector = if strategy.uses_selector() {
            Some(SelectorParams::new(model.config().d_model, T::of(lambda))?)
        } else {
            None
        };
        Ok(Self { adapters: model.init_adapters(seed), selector })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            adapters: self.adapters.zeros_like(),
            selector: self.selector.as_ref().map(|s| SelectorParams { w_a: vec![T::zero(); s.w_a.len()], lambda: s.lambda }),
        }
    }

    /// Flat parameter slices in a fixed order: adapter tensors, then `w_a`.
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = self.adapters.tensors().into_iter().map(|m| m.data.as_slice()).collect();
        if let Some(s) = &self.selector {
            out.push(&s.w_a);
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = self.adapters.tensors_mut().into_iter().map(|m| m.data.as_mut_slice()).collect();
        if let Some(s) = &mut self.selector {
            out.push(&mut s.w_a);
        }
        out
    }

    fn accumulate(&mut self, other: &Self) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s);
        }
    }

    fn scale(&mut self, factor: T) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Raw embeddings and selector intermediates, kept for the backward pass.
type SelectorTrace<T> = Option<(Matrix<T>, crate::augment::SelectorCache<T>)>;

/// Input embeddings for a sample's shifted view, after the selector when the
/// sample asks for it.
fn embed_sample<T: Scalar>(
    model: &MicroLm<T>,
    trainable: &Trainable<T>,
    ids: &[usize],
    sample: &PromptSample,
) -> Result<(Matrix<T>, SelectorTrace<T>)> {
    let raw = model.embed(ids);
    if !sample.use_selector {
        return Ok((raw, None));
    }
    let params = trainable
        .selector
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig(format!("sample {} requests the selector but none is trained", sample.id)))?;
    let (out, cache) = soft_select_forward(&raw, &sample.path_spans, params)?;
    Ok((out, Some((raw, cache))))
}

/// Masked autoregressive loss of one sample.
pub fn sample_loss<T: Scalar>(model: &MicroLm<T>, trainable: &Trainable<T>, sample: &PromptSample) -> Result<T> {
    let (inputs, targets, mask) = sample.shifted();
    let (emb, _) = embed_sample(model, trainable, inputs, sample)?;
    let fwd = model.forward(Some(&trainable.adapters), &emb, true)?;
    crate::model::autoregressive_loss(&fwd.logits, targets, mask)
}

/// Loss and gradient of one sample with respect to every trainable parameter.
pub fn sample_gradient<T: Scalar>(
    model: &MicroLm<T>,
    trainable: &Trainable<T>,
    sample: &PromptSample,
    detach_pooled: bool,
) -> Result<(T, Trainable<T>)> {
    let (inputs, targets, mask) = sample.shifted();
    let (emb, sel) = embed_sample(model, trainable, inputs, sample)?;
    let fwd = model.forward(Some(&trainable.adapters), &emb, true)?;
    let back = model.backward(Some(&trainable.adapters), &fwd, targets, mask)?;
    let mut grad = trainable.zeros_like();
    if let Some(g) = back.adapters {
        grad.adapters = g;
    }
    if let (Some((raw, cache)), Some(params), Some(gs)) = (sel, &trainable.selector, &mut grad.selector) {
        let (d_w, _) = soft_select_backward(&raw, &cache, params, &back.input, detach_pooled);
        gs.w_a = d_w;
    }
    Ok((back.loss, grad))
}

/// Moment buffers for Adam, one pair per parameter slice.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: i32,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shapes: &[&[T]]) -> Self {
        Self {
            m: shapes.iter().map(|s| vec![T::zero(); s.len()]).collect(),
            v: shapes.iter().map(|s| vec![T::zero(); s.len()]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `param` in place. `step` counts from 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    step: i32,
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
) {
    let c1 = T::one() - beta1.powi(step);
    let c2 = T::one() - beta2.powi(step);
    for i in 0..param.len() {
        m[i] = beta1 * m[i] + (T::one() - beta1) * grad[i];
        v[i] = beta2 * v[i] + (T::one() - beta2) * grad[i] * grad[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

fn adam_step<T: Scalar>(trainable: &mut Trainable<T>, grad: &Trainable<T>, state: &mut AdamState<T>, cfg: &TrainConfig) {
    state.step += 1;
    let (lr, b1, b2, eps) = (T::of(cfg.learning_rate), T::of(cfg.adam_beta1), T::of(cfg.adam_beta2), T::of(cfg.adam_eps));
    let grads = grad.slices();
    for (i, p) in trainable.slices_mut().into_iter().enumerate() {
        adam_update(p, grads[i], &mut state.m[i], &mut state.v[i], state.step, lr, b1, b2, eps);
    }
}

/// Applies the strategy's augmentation once, before any training step.
pub fn materialize(
    samples: &[PromptSample],
    strategy: Strategy,
    copies: usize,
    seed: u64,
    tok: &Tokenizer,
    context_len: usize,
) -> Result<Vec<PromptSample>> {
    let mut out = Vec::with_capacity(samples.len() * copies.max(1));
    for (i, s) in samples.iter().enumerate() {
        out.extend(augment(s, strategy, copies, seed.wrapping_add(i as u64), tok, context_len)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,mean_loss,wall_seconds";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!("{},{:.10},{:.3}", self.epoch, self.mean_loss, self.wall_seconds)
    }
}

/// Trains `trainable` in place on already-materialized samples.
///
/// Each epoch visits the samples in a seeded permutation. Gradients are
/// averaged over each batch in visiting order before one Adam step, so a
/// run is a pure function of its inputs. `on_epoch` sees every epoch's log
/// entry as soon as it is complete.
pub fn fine_tune<T: Scalar>(
    model: &MicroLm<T>,
    trainable: &mut Trainable<T>,
    samples: &[PromptSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &Trainable<T>) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let mut state = AdamState::new(&trainable.slices());
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = Instant::now();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc = trainable.zeros_like();
            for &i in batch {
                let (loss, g) = sample_gradient(model, trainable, &samples[i], cfg.detach_pooled)?;
                let loss = loss.as_f64();
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step, sample: i });
                }
                total += loss;
                acc.accumulate(&g);
            }
            acc.scale(T::one() / T::of_usize(batch.len()));
            adam_step(trainable, &acc, &mut state, cfg);
            if !trainable.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step, sample: batch[0] });
            }
        }
        let log = EpochLog { epoch, mean_loss: total / samples.len() as f64, wall_seconds: start.elapsed().as_secs_f64() };
        on_epoch(&log, trainable)?;
        logs.push(log);
    }
    Ok(logs)
}
