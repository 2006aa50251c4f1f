//! Decoder-only micro language model with frozen base weights and low-rank
//! adapters on selected attention projections.
//!
//! The forward pass consumes input embeddings rather than token ids so that
//! reweighted path embeddings can be fed straight in. Sinusoidal position
//! signals are added inside [`MicroLm::forward`].

mod lora;
mod pass;

pub use lora::{LayerAdapters, LoraAdapter, LoraSet};
pub use pass::{autoregressive_loss, BackwardResult, ForwardCache, ForwardResult};


use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Attention projection that can carry an adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Query,
    Key,
    Value,
    Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context_len: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub lora_targets: Vec<Projection>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 8192,
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            context_len: 512,
            lora_rank: 4,
            lora_alpha: 8.0,
            lora_targets: vec![Projection::Query, Projection::Value],
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.vocab_size == 0 {
            return bad("model.vocab_size must be positive");
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("model.d_model must be a positive multiple of model.n_heads");
        }
        if self.n_layers == 0 {
            return bad("model.n_layers must be at least 1");
        }
        if self.context_len == 0 {
            return bad("model.context_len must be positive");
        }
        if self.lora_rank == 0 {
            return bad("model.lora_rank must be at least 1");
        }
        if !(self.lora_alpha > 0.0) {
            return bad("model.lora_alpha must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ff_dim(&self) -> usize {
        4 * self.d_model
    }

    pub fn lora_scaling(&self) -> f64 {
        self.lora_alpha / self.lora_rank as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormWeights<T> {
    pub gain: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LayerNormWeights<T> {
    fn identity(d: usize) -> Self {
        Self { gain: vec![T::one(); d], bias: vec![T::zero(); d] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights<T> {
    pub ln_attn: LayerNormWeights<T>,
    pub wq: Matrix<T>,
    pub wk: Matrix<T>,
    pub wv: Matrix<T>,
    pub wo: Matrix<T>,
    pub ln_ff: LayerNormWeights<T>,
    pub w_up: Matrix<T>,
    pub b_up: Vec<T>,
    pub w_down: Matrix<T>,
    pub b_down: Vec<T>,
}

impl<T: Scalar> LayerWeights<T> {
    pub fn projection(&self, p: Projection) -> &Matrix<T> {
        match p {
            Projection::Query => &self.wq,
            Projection::Key => &self.wk,
            Projection::Value => &self.wv,
            Projection::Output => &self.wo,
        }
    }
}

/// Frozen base parameters. Nothing in the training loop holds a mutable
/// reference to these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseWeights<T> {
    pub token_embedding: Matrix<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub ln_final: LayerNormWeights<T>,
    pub w_out: Matrix<T>,
}

impl<T: Scalar> BaseWeights<T> {
    /// Seeded Gaussian initialisation.
    pub fn init(config: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let ff = config.ff_dim();
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let token_embedding = Matrix::gaussian(config.vocab_size, d, 1.0, &mut rng);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                ln_attn: LayerNormWeights::identity(d),
                wq: Matrix::gaussian(d, d, inv_sqrt_d, &mut rng),
                wk: Matrix::gaussian(d, d, inv_sqrt_d, &mut rng),
                wv: Matrix::gaussian(d, d, inv_sqrt_d, &mut rng),
                wo: Matrix::gaussian(d, d, inv_sqrt_d, &mut rng),
                ln_ff: LayerNormWeights::identity(d),
                w_up: Matrix::gaussian(ff, d, inv_sqrt_d, &mut rng),
                b_up: vec![T::zero(); ff],
                w_down: Matrix::gaussian(d, ff, 1.0 / (ff as f64).sqrt(), &mut rng),
                b_down: vec![T::zero(); d],
            })
            .collect();
        let w_out = Matrix::gaussian(config.vocab_size, d, inv_sqrt_d, &mut rng);
        Self { token_embedding, layers, ln_final: LayerNormWeights::identity(d), w_out }
    }

    /// Same shapes, all zeros; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.slices_mut() {
            s.iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    /// Every parameter as a flat slice, in a fixed order.
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![&self.token_embedding.data];
        for l in &self.layers {
            out.extend([
                l.ln_attn.gain.as_slice(),
                &l.ln_attn.bias,
                &l.wq.data,
                &l.wk.data,
                &l.wv.data,
                &l.wo.data,
                &l.ln_ff.gain,
                &l.ln_ff.bias,
                &l.w_up.data,
                &l.b_up,
                &l.w_down.data,
                &l.b_down,
            ]);
        }
        out.extend([self.ln_final.gain.as_slice(), &self.ln_final.bias, &self.w_out.data]);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![&mut self.token_embedding.data];
        for l in &mut self.layers {
            out.extend([
                l.ln_attn.gain.as_mut_slice(),
                &mut l.ln_attn.bias,
                &mut l.wq.data,
                &mut l.wk.data,
                &mut l.wv.data,
                &mut l.wo.data,
                &mut l.ln_ff.gain,
                &mut l.ln_ff.bias,
                &mut l.w_up.data,
                &mut l.b_up,
                &mut l.w_down.data,
                &mut l.b_down,
            ]);
        }
        out.extend([self.ln_final.gain.as_mut_slice(), &mut self.ln_final.bias, &mut self.w_out.data]);
        out
    }

    pub fn is_finite(&self) -> bool {
        let ln_ok = |ln: &LayerNormWeights<T>| ln.gain.iter().chain(&ln.bias).all(|v| v.is_finite());
        self.token_embedding.is_finite()
            && self.w_out.is_finite()
            && ln_ok(&self.ln_final)
            && self.layers.iter().all(|l| {
                ln_ok(&l.ln_attn)
                    && ln_ok(&l.ln_ff)
                    && [&l.wq, &l.wk, &l.wv, &l.wo, &l.w_up, &l.w_down].iter().all(|m| m.is_finite())
                    && l.b_up.iter().chain(&l.b_down).all(|v| v.is_finite())
            })
    }
}

/// Base model: configuration, frozen weights and the position table.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroLm<T> {
    config: ModelConfig,
    weights: BaseWeights<T>,
    positions: Matrix<T>,
}

impl<T: Scalar> MicroLm<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let weights = BaseWeights::init(&config);
        Ok(Self::from_parts(config, weights))
    }

    pub fn from_parts(config: ModelConfig, weights: BaseWeights<T>) -> Self {
        let positions = sinusoidal_positions(config.context_len, config.d_model);
        Self { config, weights, positions }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &BaseWeights<T> {
        &self.weights
    }

    /// Looks up token-embedding rows for a sequence of ids.
    pub fn embed(&self, ids: &[usize]) -> Matrix<T> {
        let d = self.config.d_model;
        let mut out = Matrix::zeros(ids.len(), d);
        for (t, &id) in ids.iter().enumerate() {
            out.row_mut(t).copy_from_slice(self.weights.token_embedding.row(id));
        }
        out
    }

    /// Fresh adapters for every configured target: `A` Gaussian, `B` zero.
    pub fn init_adapters(&self, seed: u64) -> LoraSet<T> {
        LoraSet::init(&self.config, seed)
    }

    /// Greedy decoding from prompt embeddings. Stops after `max_new_tokens`
    /// or when `eos` is produced (the EOS id is not included).
    pub fn decode_greedy(
        &self,
        adapters: Option<&LoraSet<T>>,
        prompt: &Matrix<T>,
        max_new_tokens: usize,
        eos: Option<usize>,
    ) -> Result<Vec<usize>> {
        if prompt.rows == 0 {
            return Err(Error::Shape("greedy decoding needs a nonempty prompt".into()));
        }
        let mut seq = prompt.clone();
        let mut out = Vec::new();
        for _ in 0..max_new_tokens {
            let fwd = self.forward(adapters, &seq, true)?;
            let last = fwd.logits.row(fwd.logits.rows - 1);
            let next = argmax(last);
            if Some(next) == eos {
                break;
            }
            out.push(next);
            let mut data = seq.data;
            data.extend_from_slice(self.weights.token_embedding.row(next));
            seq = Matrix::from_vec(seq.rows + 1, seq.cols, data);
        }
        Ok(out)
    }
}

/// Index of the largest entry; the first one wins on ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn sinusoidal_positions<T: Scalar>(len: usize, d: usize) -> Matrix<T> {
    let mut m = Matrix::zeros(len, d);
    for pos in 0..len {
        let row = m.row_mut(pos);
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            row[i] = T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    m
}
