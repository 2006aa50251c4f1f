//! Forward pass with cached activations, the masked autoregressive loss, and
//! the hand-derived backward pass.

use super::{BaseWeights, LayerNormWeights, LayerWeights, LoraAdapter, LoraSet, MicroLm, Projection};
use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, log_sum_exp, softmax_in_place, Scalar};
use crate::tensor::{linear, linear_backward_input, linear_backward_weight, Matrix};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
struct NormCache<T> {
    xhat: Matrix<T>,
    rstd: Vec<T>,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    ln_attn: NormCache<T>,
    h_attn: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    /// `A · x` for each adapted projection, indexed q, k, v, o.
    lora_in: [Option<Matrix<T>>; 4],
    /// Per-head attention probabilities, `T × T` (upper triangle zero when causal).
    probs: Vec<Matrix<T>>,
    attn: Matrix<T>,
    ln_ff: NormCache<T>,
    pre_act: Matrix<T>,
}

/// Activations retained for [`MicroLm::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    layers: Vec<LayerCache<T>>,
    ln_final: NormCache<T>,
    causal: bool,
}

#[derive(Debug, Clone)]
pub struct ForwardResult<T> {
    /// `seq_len × vocab_size`
    pub logits: Matrix<T>,
    pub cache: ForwardCache<T>,
}

#[derive(Debug, Clone)]
pub struct BackwardResult<T> {
    pub loss: T,
    pub adapters: Option<LoraSet<T>>,
    /// Gradient with respect to the input embeddings passed to `forward`.
    pub input: Matrix<T>,
}

fn proj_index(p: Projection) -> usize {
    match p {
        Projection::Query => 0,
        Projection::Key => 1,
        Projection::Value => 2,
        Projection::Output => 3,
    }
}

fn layer_norm<T: Scalar>(x: &Matrix<T>, w: &LayerNormWeights<T>) -> (Matrix<T>, NormCache<T>) {
    let d = x.cols;
    let n = T::of_usize(d);
    let eps = T::of(LN_EPS);
    let mut y = Matrix::zeros(x.rows, d);
    let mut xhat = Matrix::zeros(x.rows, d);
    let mut rstd = Vec::with_capacity(x.rows);
    for t in 0..x.rows {
        let xr = x.row(t);
        let mean = xr.iter().copied().sum::<T>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rs = T::one() / (var + eps).sqrt();
        rstd.push(rs);
        let xh = xhat.row_mut(t);
        for i in 0..d {
            xh[i] = (xr[i] - mean) * rs;
        }
        let yr = y.row_mut(t);
        for i in 0..d {
            yr[i] = xh[i] * w.gain[i] + w.bias[i];
        }
    }
    (y, NormCache { xhat, rstd })
}

/// Accumulates the input gradient of a layer norm into `dx`, and the gain
/// and bias gradients into `dw` when given.
fn layer_norm_backward<T: Scalar>(
    dy: &Matrix<T>,
    cache: &NormCache<T>,
    w: &LayerNormWeights<T>,
    dx: &mut Matrix<T>,
    dw: Option<&mut LayerNormWeights<T>>,
) {
    if let Some(g) = dw {
        for t in 0..dy.rows {
            for (i, (&dyi, &xh)) in dy.row(t).iter().zip(cache.xhat.row(t)).enumerate() {
                g.gain[i] += dyi * xh;
                g.bias[i] += dyi;
            }
        }
    }
    let d = dy.cols;
    let n = T::of_usize(d);
    let mut dxhat = vec![T::zero(); d];
    for t in 0..dy.rows {
        let dyr = dy.row(t);
        let xh = cache.xhat.row(t);
        for i in 0..d {
            dxhat[i] = dyr[i] * w.gain[i];
        }
        let mean_d = dxhat.iter().copied().sum::<T>() / n;
        let mean_dx = dot(&dxhat, xh) / n;
        let rs = cache.rstd[t];
        let dxr = dx.row_mut(t);
        for i in 0..d {
            dxr[i] += rs * (dxhat[i] - mean_d - xh[i] * mean_dx);
        }
    }
}

fn norm_output<T: Scalar>(cache: &NormCache<T>, w: &LayerNormWeights<T>) -> Matrix<T> {
    let mut y = cache.xhat.clone();
    for t in 0..y.rows {
        for (i, v) in y.row_mut(t).iter_mut().enumerate() {
            *v = *v * w.gain[i] + w.bias[i];
        }
    }
    y
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(GELU_K);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(GELU_K);
    let half = T::of(0.5);
    let th = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + T::of(3.0) * k * x * x)
}

fn project<T: Scalar>(
    h: &Matrix<T>,
    w: &Matrix<T>,
    adapter: Option<&LoraAdapter<T>>,
) -> (Matrix<T>, Option<Matrix<T>>) {
    let mut y = linear(h, w);
    let Some(ad) = adapter else {
        return (y, None);
    };
    let u = linear(h, &ad.a);
    let delta = linear(&u, &ad.b);
    for (yi, di) in y.data.iter_mut().zip(&delta.data) {
        *yi += ad.scaling * *di;
    }
    (y, Some(u))
}

/// Accumulates `dh` for `y = h·wᵀ + s·(h·Aᵀ)·Bᵀ`, the adapter gradients,
/// and the base weight gradient when `dw` is given.
fn project_backward<T: Scalar>(
    dy: &Matrix<T>,
    h: &Matrix<T>,
    w: &Matrix<T>,
    adapter: Option<(&LoraAdapter<T>, &Matrix<T>)>,
    grad: Option<&mut LoraAdapter<T>>,
    dh: &mut Matrix<T>,
    dw: Option<&mut Matrix<T>>,
) {
    linear_backward_input(dy, w, dh);
    if let Some(dw) = dw {
        linear_backward_weight(dy, h, dw);
    }
    let Some((ad, u)) = adapter else {
        return;
    };
    let g = grad.expect("gradient slot for adapted projection");
    let mut dy_scaled = dy.clone();
    dy_scaled.data.iter_mut().for_each(|v| *v *= ad.scaling);
    linear_backward_weight(&dy_scaled, u, &mut g.b);
    let mut du = Matrix::zeros(u.rows, u.cols);
    linear_backward_input(&dy_scaled, &ad.b, &mut du);
    linear_backward_weight(&du, h, &mut g.a);
    linear_backward_input(&du, &ad.a, dh);
}

impl<T: Scalar> MicroLm<T> {
    /// Runs the transformer on `input` (`seq_len × d_model`) and returns
    /// logits for every position.
    pub fn forward(
        &self,
        adapters: Option<&LoraSet<T>>,
        input: &Matrix<T>,
        causal: bool,
    ) -> Result<ForwardResult<T>> {
        let cfg = &self.config;
        let seq = input.rows;
        if seq > cfg.context_len {
            return Err(Error::ContextOverflow { len: seq, limit: cfg.context_len });
        }
        if input.cols != cfg.d_model {
            return Err(Error::Shape(format!(
                "input width {} differs from model width {}",
                input.cols, cfg.d_model
            )));
        }
        if let Some(ad) = adapters {
            if ad.layers.len() != cfg.n_layers {
                return Err(Error::Shape("adapter layer count differs from model".into()));
            }
        }

        let mut x = input.clone();
        for t in 0..seq {
            axpy(T::one(), self.positions.row(t), x.row_mut(t));
        }

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for (li, lw) in self.weights.layers.iter().enumerate() {
            let la = adapters.map(|a| &a.layers[li]);
            let cache = self.layer_forward(lw, la, &mut x, causal);
            layers.push(cache);
        }

        let (h_final, ln_final) = layer_norm(&x, &self.weights.ln_final);
        let logits = linear(&h_final, &self.weights.w_out);
        Ok(ForwardResult { logits, cache: ForwardCache { layers, ln_final, causal } })
    }

    fn layer_forward(
        &self,
        lw: &LayerWeights<T>,
        la: Option<&super::LayerAdapters<T>>,
        x: &mut Matrix<T>,
        causal: bool,
    ) -> LayerCache<T> {
        let seq = x.rows;
        let d = self.config.d_model;
        let heads = self.config.n_heads;
        let hd = self.config.head_dim();
        let inv_sqrt = T::one() / T::of_usize(hd).sqrt();
        let adapter = |p: Projection| la.and_then(|l| l.get(p));

        let (h_attn, ln_attn) = layer_norm(x, &lw.ln_attn);
        let (q, uq) = project(&h_attn, &lw.wq, adapter(Projection::Query));
        let (k, uk) = project(&h_attn, &lw.wk, adapter(Projection::Key));
        let (v, uv) = project(&h_attn, &lw.wv, adapter(Projection::Value));

        let mut attn = Matrix::zeros(seq, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let off = h * hd;
            let mut p = Matrix::zeros(seq, seq);
            for i in 0..seq {
                let visible = if causal { i + 1 } else { seq };
                let qi = &q.row(i)[off..off + hd];
                let row = &mut p.row_mut(i)[..visible];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = dot(qi, &k.row(j)[off..off + hd]) * inv_sqrt;
                }
                softmax_in_place(row);
                let out = &mut attn.row_mut(i)[off..off + hd];
                for (j, &pij) in p.row(i)[..visible].iter().enumerate() {
                    axpy(pij, &v.row(j)[off..off + hd], out);
                }
            }
            probs.push(p);
        }

        let (o, uo) = project(&attn, &lw.wo, adapter(Projection::Output));
        x.add_assign(&o);

        let (h_ff, ln_ff) = layer_norm(x, &lw.ln_ff);
        let mut pre_act = linear(&h_ff, &lw.w_up);
        for t in 0..seq {
            axpy(T::one(), &lw.b_up, pre_act.row_mut(t));
        }
        let mut act = pre_act.clone();
        act.data.iter_mut().for_each(|v| *v = gelu(*v));
        let mut down = linear(&act, &lw.w_down);
        for t in 0..seq {
            axpy(T::one(), &lw.b_down, down.row_mut(t));
        }
        x.add_assign(&down);

        LayerCache {
            ln_attn,
            h_attn,
            q,
            k,
            v,
            lora_in: [uq, uk, uv, uo],
            probs,
            attn,
            ln_ff,
            pre_act,
        }
    }

    /// Loss and gradients for the masked autoregressive objective.
    ///
    /// `targets[t]` is the token expected after position `t`. Base weights
    /// receive no gradient; only adapters and the input embeddings do.
    pub fn backward(
        &self,
        adapters: Option<&LoraSet<T>>,
        fwd: &ForwardResult<T>,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<BackwardResult<T>> {
        self.backward_impl(adapters, fwd, targets, mask, None)
    }

    /// Like [`MicroLm::backward`] without adapters, additionally accumulating
    /// gradients for every base weight into `base_grad`. The token-embedding
    /// gradient is left to the caller, who owns the id-to-row mapping: it is
    /// the returned input gradient scattered onto the input ids.
    pub fn backward_base(
        &self,
        fwd: &ForwardResult<T>,
        targets: &[usize],
        mask: &[bool],
        base_grad: &mut BaseWeights<T>,
    ) -> Result<BackwardResult<T>> {
        self.backward_impl(None, fwd, targets, mask, Some(base_grad))
    }

    fn backward_impl(
        &self,
        adapters: Option<&LoraSet<T>>,
        fwd: &ForwardResult<T>,
        targets: &[usize],
        mask: &[bool],
        mut base_grad: Option<&mut BaseWeights<T>>,
    ) -> Result<BackwardResult<T>> {
        let (loss, dlogits) = loss_and_logit_grad(&fwd.logits, targets, mask)?;
        let cfg = &self.config;
        let seq = fwd.logits.rows;
        let d = cfg.d_model;

        let mut grads = adapters.map(LoraSet::zeros_like);

        let mut dh = Matrix::zeros(seq, d);
        linear_backward_input(&dlogits, &self.weights.w_out, &mut dh);
        let mut dx = Matrix::zeros(seq, d);
        if let Some(bg) = base_grad.as_deref_mut() {
            let h_final = norm_output(&fwd.cache.ln_final, &self.weights.ln_final);
            linear_backward_weight(&dlogits, &h_final, &mut bg.w_out);
        }
        layer_norm_backward(
            &dh,
            &fwd.cache.ln_final,
            &self.weights.ln_final,
            &mut dx,
            base_grad.as_deref_mut().map(|g| &mut g.ln_final),
        );

        for li in (0..cfg.n_layers).rev() {
            let lw = &self.weights.layers[li];
            let lc = &fwd.cache.layers[li];
            let la = adapters.map(|a| &a.layers[li]);
            let lg = grads.as_mut().map(|g| &mut g.layers[li]);
            let bg = base_grad.as_deref_mut().map(|g| &mut g.layers[li]);
            dx = self.layer_backward(lw, lc, la, lg, bg, dx, fwd.cache.causal);
        }

        // Positions are additive constants, so dx is the input gradient.
        Ok(BackwardResult { loss, adapters: grads, input: dx })
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward(
        &self,
        lw: &LayerWeights<T>,
        lc: &LayerCache<T>,
        la: Option<&super::LayerAdapters<T>>,
        mut lg: Option<&mut super::LayerAdapters<T>>,
        mut bg: Option<&mut LayerWeights<T>>,
        dx: Matrix<T>,
        causal: bool,
    ) -> Matrix<T> {
        let seq = dx.rows;
        let d = self.config.d_model;
        let heads = self.config.n_heads;
        let hd = self.config.head_dim();
        let inv_sqrt = T::one() / T::of_usize(hd).sqrt();

        let adapter_pair = |p: Projection| -> Option<(&LoraAdapter<T>, &Matrix<T>)> {
            let ad = la.and_then(|l| l.get(p))?;
            Some((ad, lc.lora_in[proj_index(p)].as_ref().expect("cached adapter input")))
        };

        // Feed-forward block.
        let mut d_act = Matrix::zeros(seq, self.config.ff_dim());
        linear_backward_input(&dx, &lw.w_down, &mut d_act);
        if let Some(g) = bg.as_deref_mut() {
            let mut act = lc.pre_act.clone();
            act.data.iter_mut().for_each(|v| *v = gelu(*v));
            linear_backward_weight(&dx, &act, &mut g.w_down);
            for t in 0..seq {
                axpy(T::one(), dx.row(t), &mut g.b_down);
            }
        }
        for (g, &pre) in d_act.data.iter_mut().zip(&lc.pre_act.data) {
            *g *= gelu_grad(pre);
        }
        let mut d_hff = Matrix::zeros(seq, d);
        linear_backward_input(&d_act, &lw.w_up, &mut d_hff);
        if let Some(g) = bg.as_deref_mut() {
            let h_ff = norm_output(&lc.ln_ff, &lw.ln_ff);
            linear_backward_weight(&d_act, &h_ff, &mut g.w_up);
            for t in 0..seq {
                axpy(T::one(), d_act.row(t), &mut g.b_up);
            }
        }
        let mut dx_mid = dx;
        layer_norm_backward(&d_hff, &lc.ln_ff, &lw.ln_ff, &mut dx_mid, bg.as_deref_mut().map(|g| &mut g.ln_ff));

        // Attention output projection.
        let mut d_attn = Matrix::zeros(seq, d);
        project_backward(
            &dx_mid,
            &lc.attn,
            &lw.wo,
            adapter_pair(Projection::Output),
            lg.as_mut().and_then(|g| g.get_mut(Projection::Output)),
            &mut d_attn,
            bg.as_deref_mut().map(|g| &mut g.wo),
        );

        let mut dq = Matrix::zeros(seq, d);
        let mut dk = Matrix::zeros(seq, d);
        let mut dv = Matrix::zeros(seq, d);
        let mut dp = vec![T::zero(); seq];
        for h in 0..heads {
            let off = h * hd;
            let p = &lc.probs[h];
            for i in 0..seq {
                let visible = if causal { i + 1 } else { seq };
                let dout = &d_attn.row(i)[off..off + hd];
                if dout.iter().all(|g| *g == T::zero()) {
                    continue;
                }
                let prow = &p.row(i)[..visible];
                let mut weighted = T::zero();
                for j in 0..visible {
                    dp[j] = dot(dout, &lc.v.row(j)[off..off + hd]);
                    weighted += prow[j] * dp[j];
                    axpy(prow[j], dout, &mut dv.row_mut(j)[off..off + hd]);
                }
                for j in 0..visible {
                    let ds = prow[j] * (dp[j] - weighted) * inv_sqrt;
                    if ds == T::zero() {
                        continue;
                    }
                    axpy(ds, &lc.k.row(j)[off..off + hd], &mut dq.row_mut(i)[off..off + hd]);
                    axpy(ds, &lc.q.row(i)[off..off + hd], &mut dk.row_mut(j)[off..off + hd]);
                }
            }
        }

        let mut d_hattn = Matrix::zeros(seq, d);
        for (p, grad_out, w) in [
            (Projection::Query, &dq, &lw.wq),
            (Projection::Key, &dk, &lw.wk),
            (Projection::Value, &dv, &lw.wv),
        ] {
            let dw = bg.as_deref_mut().map(|g| match p {
                Projection::Query => &mut g.wq,
                Projection::Key => &mut g.wk,
                _ => &mut g.wv,
            });
            project_backward(
                grad_out,
                &lc.h_attn,
                w,
                adapter_pair(p),
                lg.as_mut().and_then(|g| g.get_mut(p)),
                &mut d_hattn,
                dw,
            );
        }
        let mut dx_in = dx_mid;
        layer_norm_backward(&d_hattn, &lc.ln_attn, &lw.ln_attn, &mut dx_in, bg.map(|g| &mut g.ln_attn));
        dx_in
    }
}

/// Negative mean log-likelihood over the positions where `mask` is set.
pub fn autoregressive_loss<T: Scalar>(logits: &Matrix<T>, targets: &[usize], mask: &[bool]) -> Result<T> {
    check_loss_shapes(logits, targets, mask)?;
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(Error::AllMaskedOut);
    }
    let mut total = T::zero();
    for t in 0..logits.rows {
        if mask[t] {
            let row = logits.row(t);
            total += log_sum_exp(row) - row[targets[t]];
        }
    }
    Ok(total / T::of_usize(count))
}

fn check_loss_shapes<T: Scalar>(logits: &Matrix<T>, targets: &[usize], mask: &[bool]) -> Result<()> {
    if targets.len() != logits.rows || mask.len() != logits.rows {
        return Err(Error::Shape(format!(
            "logits have {} rows, targets {}, mask {}",
            logits.rows,
            targets.len(),
            mask.len()
        )));
    }
    if let Some(&bad) = targets.iter().zip(mask).filter(|(_, m)| **m).map(|(t, _)| t).find(|&&t| t >= logits.cols) {
        return Err(Error::Shape(format!("target id {bad} outside vocabulary of {}", logits.cols)));
    }
    Ok(())
}

fn loss_and_logit_grad<T: Scalar>(
    logits: &Matrix<T>,
    targets: &[usize],
    mask: &[bool],
) -> Result<(T, Matrix<T>)> {
    let loss = autoregressive_loss(logits, targets, mask)?;
    let count = T::of_usize(mask.iter().filter(|m| **m).count());
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    for t in 0..logits.rows {
        if !mask[t] {
            continue;
        }
        let g = grad.row_mut(t);
        g.copy_from_slice(logits.row(t));
        softmax_in_place(g);
        g[targets[t]] -= T::one();
        g.iter_mut().for_each(|v| *v /= count);
    }
    Ok((loss, grad))
}
