//! Path-prompt debiasing: order shuffling, the soft path selector, and their
//! combination.
//!
//! The selector mean-pools each path's word embeddings, scores the pooled
//! vectors with a single linear map `w_a`, softmaxes the scores into path
//! weights `α`, and rescales every in-path embedding by `1 + λ·α_i`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::PromptSample;
use crate::scalar::{axpy, dot, softmax_in_place, Scalar};
use crate::tensor::Matrix;
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    None,
    Shuffle,
    #[serde(rename = "selector")]
    SoftSelector,
    Hybrid,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::None, Strategy::Shuffle, Strategy::SoftSelector, Strategy::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Shuffle => "shuffle",
            Strategy::SoftSelector => "selector",
            Strategy::Hybrid => "hybrid",
        }
    }

    pub fn uses_selector(self) -> bool {
        matches!(self, Strategy::SoftSelector | Strategy::Hybrid)
    }

    pub fn shuffles(self) -> bool {
        matches!(self, Strategy::Shuffle | Strategy::Hybrid)
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy {s:?} (none|shuffle|selector|hybrid)")))
    }
}

/// Trainable scorer `w_a` and the fixed residual controller `λ ∈ (0, 0.5]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorParams<T> {
    pub w_a: Vec<T>,
    pub lambda: T,
}

impl<T: Scalar> SelectorParams<T> {
    /// Zero scorer (uniform path weights) of width `d`.
    pub fn new(d: usize, lambda: T) -> Result<Self> {
        Self::with_weights(vec![T::zero(); d], lambda)
    }

    pub fn with_weights(w_a: Vec<T>, lambda: T) -> Result<Self> {
        check_lambda(lambda.as_f64())?;
        Ok(Self { w_a, lambda })
    }
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda <= 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("selector lambda must lie in (0, 0.5], got {lambda}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathWeights<T> {
    pub alphas: Vec<T>,
}

/// Distinct random orderings of the sample's path prompts.
///
/// Returns `min(m, paths!)` samples; with fewer than two paths the input is
/// returned alone. Labels, profile and job text are untouched.
pub fn shuffle_augment(
    sample: &PromptSample,
    m: usize,
    seed: u64,
    tok: &Tokenizer,
    context_len: usize,
) -> Result<Vec<PromptSample>> {
    let n = sample.paths.len();
    if n < 2 || m <= 1 {
        return Ok(vec![sample.clone()]);
    }
    let distinct = (1..=n).try_fold(1usize, |acc, k| acc.checked_mul(k)).unwrap_or(usize::MAX);
    let want = m.min(distinct);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut out = Vec::with_capacity(want);
    let mut order: Vec<usize> = (0..n).collect();
    while out.len() < want {
        order.shuffle(&mut rng);
        if seen.insert(order.clone()) {
            let paths = order.iter().map(|&i| sample.paths[i].clone()).collect();
            out.push(sample.with_paths(paths, tok, context_len)?);
        }
    }
    Ok(out)
}

/// Applies a debiasing strategy to one sample.
pub fn augment(
    sample: &PromptSample,
    strategy: Strategy,
    m: usize,
    seed: u64,
    tok: &Tokenizer,
    context_len: usize,
) -> Result<Vec<PromptSample>> {
    let mut out = if strategy.shuffles() {
        shuffle_augment(sample, m, seed, tok, context_len)?
    } else {
        vec![sample.clone()]
    };
    if strategy.uses_selector() {
        out.iter_mut().for_each(|s| s.use_selector = true);
    }
    Ok(out)
}

/// Mean of a nonempty set of embedding rows.
pub fn mean_pool_path_embedding<T: Scalar>(rows: &[&[T]]) -> Result<Vec<T>> {
    let first = rows.first().ok_or(Error::EmptySpan)?;
    let mut acc = vec![T::zero(); first.len()];
    for r in rows {
        axpy(T::one(), r, &mut acc);
    }
    let n = T::of_usize(rows.len());
    acc.iter_mut().for_each(|v| *v /= n);
    Ok(acc)
}

/// Softmax over `w_a · H_i`.
pub fn soft_select_weights<T: Scalar>(path_embeddings: &[Vec<T>], params: &SelectorParams<T>) -> PathWeights<T> {
    let mut alphas: Vec<T> = path_embeddings.iter().map(|h| dot(&params.w_a, h)).collect();
    if !alphas.is_empty() {
        softmax_in_place(&mut alphas);
    }
    PathWeights { alphas }
}

fn check_spans(spans: &[(usize, usize)], rows: usize) -> Result<()> {
    let mut sorted: Vec<_> = spans.to_vec();
    sorted.sort_unstable();
    for w in sorted.windows(2) {
        if w[0].1 > w[1].0 {
            return Err(Error::SpanOverlap);
        }
    }
    if sorted.iter().any(|&(s, e)| s > e || e > rows) {
        return Err(Error::SpanOverlap);
    }
    Ok(())
}

/// `ê_t = (1 + λ·α_i)·e_t` for every token `t` in span `i`.
pub fn apply_residual_reweight<T: Scalar>(
    embeddings: &Matrix<T>,
    spans: &[(usize, usize)],
    weights: &PathWeights<T>,
    lambda: T,
) -> Result<Matrix<T>> {
    if spans.len() != weights.alphas.len() {
        return Err(Error::Shape(format!("{} spans but {} path weights", spans.len(), weights.alphas.len())));
    }
    check_spans(spans, embeddings.rows)?;
    let mut out = embeddings.clone();
    for (&(s, e), &alpha) in spans.iter().zip(&weights.alphas) {
        let scale = T::one() + lambda * alpha;
        for t in s..e {
            out.row_mut(t).iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(out)
}

/// Intermediates of [`soft_select_forward`] needed for its backward pass.
#[derive(Debug, Clone)]
pub struct SelectorCache<T> {
    spans: Vec<(usize, usize)>,
    pooled: Vec<Vec<T>>,
    pub weights: PathWeights<T>,
}

/// Full selector on one embedded sequence: pool, score, reweight.
/// Empty spans are dropped; with no remaining spans the input passes through.
pub fn soft_select_forward<T: Scalar>(
    embeddings: &Matrix<T>,
    spans: &[(usize, usize)],
    params: &SelectorParams<T>,
) -> Result<(Matrix<T>, SelectorCache<T>)> {
    check_spans(spans, embeddings.rows)?;
    let spans: Vec<(usize, usize)> = spans.iter().copied().filter(|(s, e)| e > s).collect();
    let pooled = spans
        .iter()
        .map(|&(s, e)| {
            let rows: Vec<&[T]> = (s..e).map(|t| embeddings.row(t)).collect();
            mean_pool_path_embedding(&rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = soft_select_weights(&pooled, params);
    let out = apply_residual_reweight(embeddings, &spans, &weights, params.lambda)?;
    Ok((out, SelectorCache { spans, pooled, weights }))
}

/// Gradients of the selector given `d_out = ∂L/∂ê`.
///
/// Returns `(∂L/∂w_a, ∂L/∂e)`. With `detach_pooled` the input gradient skips
/// the path through the pooled embeddings and path weights.
pub fn soft_select_backward<T: Scalar>(
    embeddings: &Matrix<T>,
    cache: &SelectorCache<T>,
    params: &SelectorParams<T>,
    d_out: &Matrix<T>,
    detach_pooled: bool,
) -> (Vec<T>, Matrix<T>) {
    let lambda = params.lambda;
    let alphas = &cache.weights.alphas;
    let mut d_alpha = vec![T::zero(); alphas.len()];
    for (i, &(s, e)) in cache.spans.iter().enumerate() {
        for t in s..e {
            d_alpha[i] += lambda * dot(d_out.row(t), embeddings.row(t));
        }
    }
    let mean_d: T = alphas.iter().zip(&d_alpha).map(|(&a, &g)| a * g).sum();
    let d_logit: Vec<T> = alphas.iter().zip(&d_alpha).map(|(&a, &g)| a * (g - mean_d)).collect();

    let mut d_w = vec![T::zero(); params.w_a.len()];
    for (h, &g) in cache.pooled.iter().zip(&d_logit) {
        axpy(g, h, &mut d_w);
    }

    let mut d_in = d_out.clone();
    for (i, &(s, e)) in cache.spans.iter().enumerate() {
        let scale = T::one() + lambda * alphas[i];
        let through_pool = d_logit[i] / T::of_usize(e - s);
        for t in s..e {
            let row = d_in.row_mut(t);
            row.iter_mut().for_each(|v| *v *= scale);
            if !detach_pooled {
                axpy(through_pool, &params.w_a, row);
            }
        }
    }
    (d_w, d_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{Answer, Task};
    use proptest::prelude::{any, prop, prop_assert, proptest};
    use super::Strategy;
    use rand::Rng;

    fn tok() -> Tokenizer {
        Tokenizer::fit(&["one two three four five six path alpha beta gamma profile jd text instruction ."], 200)
    }

    fn sample(paths: &[&str]) -> PromptSample {
        PromptSample::assemble(
            &tok(),
            "s",
            Task::PointWise,
            "instruction",
            "profile",
            paths.iter().map(|p| p.to_string()).collect(),
            vec!["jd text.".into()],
            Answer::Yes,
            256,
        )
        .unwrap()
    }

    #[test]
    fn shuffle_examples() {
        let t = tok();
        let one = sample(&["path alpha"]);
        assert_eq!(shuffle_augment(&one, 3, 1, &t, 256).unwrap(), vec![one.clone()]);

        let two = sample(&["path alpha", "path beta"]);
        let out = shuffle_augment(&two, 2, 5, &t, 256).unwrap();
        assert_eq!(out.len(), 2);
        let orders: BTreeSet<Vec<String>> = out.iter().map(|s| s.paths.clone()).collect();
        assert_eq!(orders.len(), 2);

        let three = sample(&["path alpha", "path beta", "path gamma"]);
        let out = shuffle_augment(&three, 4, 9, &t, 256).unwrap();
        assert_eq!(out.len(), 4);
        let mut want = three.paths.clone();
        want.sort();
        for s in &out {
            let mut got = s.paths.clone();
            got.sort();
            assert_eq!(got, want);
            assert_eq!(s.label, three.label);
            assert_eq!(s.jds, three.jds);
            assert_eq!(s.profile, three.profile);
        }
        assert_eq!(out, shuffle_augment(&three, 4, 9, &t, 256).unwrap());
    }

    #[test]
    fn strategy_composition() {
        let t = tok();
        let two = sample(&["path alpha", "path beta"]);
        let none = augment(&two, Strategy::None, 2, 3, &t, 256).unwrap();
        assert_eq!(none, vec![two.clone()]);
        let sel = augment(&two, Strategy::SoftSelector, 2, 3, &t, 256).unwrap();
        assert_eq!(sel.len(), 1);
        assert!(sel[0].use_selector);
        let hybrid = augment(&two, Strategy::Hybrid, 2, 3, &t, 256).unwrap();
        assert_eq!(hybrid.len(), 2);
        assert!(hybrid.iter().all(|s| s.use_selector));
        let shuffle = augment(&two, Strategy::Shuffle, 2, 3, &t, 256).unwrap();
        for (a, b) in shuffle.iter().zip(&hybrid) {
            let mut b = b.clone();
            assert_ne!(a, &b);
            b.use_selector = false;
            assert_eq!(a, &b);
        }
    }

    #[test]
    fn pooling_examples() {
        assert_eq!(mean_pool_path_embedding(&[&[2.0, 4.0][..]]).unwrap(), vec![2.0, 4.0]);
        assert_eq!(mean_pool_path_embedding(&[&[1.0, 0.0][..], &[0.0, 1.0][..]]).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(mean_pool_path_embedding::<f64>(&[]), Err(Error::EmptySpan)));
    }

    #[test]
    fn weight_examples() {
        let p = SelectorParams::<f64>::with_weights(vec![1.0, 0.0], 0.25).unwrap();
        assert_eq!(soft_select_weights(&[vec![3.0, 1.0]], &p).alphas, vec![1.0]);
        let same = soft_select_weights(&[vec![0.3, 0.1], vec![0.3, 0.1], vec![0.3, 0.1]], &p);
        for a in same.alphas {
            assert!((a - 1.0 / 3.0).abs() < 1e-15);
        }
        let w = soft_select_weights(&[vec![2f64.ln(), 0.0], vec![0.0, 0.0]], &p);
        assert!((w.alphas[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w.alphas[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn lambda_range_enforced() {
        assert!(SelectorParams::<f64>::new(4, 0.0).is_err());
        assert!(SelectorParams::<f64>::new(4, 0.51).is_err());
        assert!(SelectorParams::<f64>::new(4, 0.5).is_ok());
    }

    #[test]
    fn reweight_examples() {
        let e = Matrix::from_vec(3, 2, vec![1.0, 1.0, 2.0, -1.0, 5.0, 7.0]);
        let w = PathWeights { alphas: vec![0.5] };
        let out = apply_residual_reweight(&e, &[(0, 1)], &w, 0.5).unwrap();
        assert_eq!(out.row(0), &[1.25, 1.25]);
        assert_eq!(out.row(1), e.row(1));
        assert_eq!(out.row(2), e.row(2));
        let two = PathWeights { alphas: vec![0.5, 0.5] };
        assert!(matches!(apply_residual_reweight(&e, &[(0, 2), (1, 3)], &two, 0.5), Err(Error::SpanOverlap)));
    }

    #[test]
    fn selector_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let e: Matrix<f64> = Matrix::gaussian(9, 4, 1.0, &mut rng);
        let spans = [(1, 4), (4, 6), (7, 9)];
        let params = SelectorParams::with_weights((0..4).map(|_| rng.random_range(-1.0..1.0)).collect(), 0.4).unwrap();
        let probe: Matrix<f64> = Matrix::gaussian(9, 4, 1.0, &mut rng);
        // Scalar objective L = <probe, ê>.
        let objective = |e: &Matrix<f64>, p: &SelectorParams<f64>| {
            let (out, _) = soft_select_forward(e, &spans, p).unwrap();
            dot(&out.data, &probe.data)
        };
        let (_, cache) = soft_select_forward(&e, &spans, &params).unwrap();
        let (d_w, d_e) = soft_select_backward(&e, &cache, &params, &probe, false);
        let h = 1e-6;
        for i in 0..4 {
            let mut plus = params.clone();
            plus.w_a[i] += h;
            let mut minus = params.clone();
            minus.w_a[i] -= h;
            let num = (objective(&e, &plus) - objective(&e, &minus)) / (2.0 * h);
            assert!((num - d_w[i]).abs() < 1e-7, "w_a[{i}] {num} vs {}", d_w[i]);
        }
        for k in 0..e.data.len() {
            let mut plus = e.clone();
            plus.data[k] += h;
            let mut minus = e.clone();
            minus.data[k] -= h;
            let num = (objective(&plus, &params) - objective(&minus, &params)) / (2.0 * h);
            assert!((num - d_e.data[k]).abs() < 1e-7, "e[{k}] {num} vs {}", d_e.data[k]);
        }
    }

    proptest! {
        #[test]
        fn weights_normalised_and_shift_invariant(
            logits in prop::collection::vec(-20.0f64..20.0, 1..8),
            shift in -50.0f64..50.0,
        ) {
            // Encode logits as one-dimensional embeddings with w_a = [1].
            let p = SelectorParams::with_weights(vec![1.0], 0.3).unwrap();
            let h: Vec<Vec<f64>> = logits.iter().map(|&l| vec![l]).collect();
            let hs: Vec<Vec<f64>> = logits.iter().map(|&l| vec![l + shift]).collect();
            let a = soft_select_weights(&h, &p).alphas;
            let b = soft_select_weights(&hs, &p).alphas;
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(*x >= 0.0);
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn reweight_scales_without_rotating(seed in any::<u64>(), lambda in 0.01f64..=0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e: Matrix<f64> = Matrix::gaussian(6, 3, 1.0, &mut rng);
            let a0: f64 = rng.random_range(0.0..1.0);
            let w = PathWeights { alphas: vec![a0, 1.0 - a0] };
            let out = apply_residual_reweight(&e, &[(0, 2), (3, 5)], &w, lambda).unwrap();
            for t in 0..6 {
                let scale = match t { 0 | 1 => 1.0 + lambda * a0, 3 | 4 => 1.0 + lambda * (1.0 - a0), _ => 1.0 };
                prop_assert!((1.0..=1.0 + lambda).contains(&scale));
                for c in 0..3 {
                    prop_assert!((out.at(t, c) - scale * e.at(t, c)).abs() < 1e-12);
                }
            }
        }
    }
}
