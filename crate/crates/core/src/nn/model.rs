//! Forward pass, loss and reverse-mode gradients of the decoder.
//!
//! Activations are row-major `[n_seq · seq_len, width]`. Every block is
//! pre-norm: `x += attn(ln1(x)); x += mlp(ln2(x))`, followed by a final norm
//! and the tied output projection.

use rand::Rng;

use super::params::{LayerOffsets, Params};
use super::scalar::{gemm, View};
use super::{ModelError, Scalar};

pub(super) const LN_EPS: f64 = 1e-5;

/// Equal-length sequences with next-token targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n_seq: usize,
    pub seq_len: usize,
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    /// Positions contributing to the loss.
    pub mask: Vec<bool>,
}

impl Batch {
    /// One sequence predicting `tokens[i + 1]` from the prefix ending at `i`.
    pub fn from_sequence(tokens: &[u32]) -> Self {
        let l = tokens.len().saturating_sub(1).max(1);
        let mut inputs = tokens[..l.min(tokens.len())].to_vec();
        inputs.resize(l, 0);
        let targets: Vec<u32> = (0..l).map(|i| tokens.get(i + 1).copied().unwrap_or(0)).collect();
        let mask = (0..l).map(|i| i + 1 < tokens.len()).collect();
        Self { n_seq: 1, seq_len: l, inputs, targets, mask }
    }

    pub fn counted(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn check_tokens<T>(params: &Params<T>, tokens: &[u32], seq_len: usize) -> Result<(), ModelError> {
    let cfg = &params.config;
    if seq_len == 0 {
        return Err(ModelError::Shape("empty sequence".into()));
    }
    if seq_len > cfg.ctx_len {
        return Err(ModelError::ContextOverflow { len: seq_len, ctx_len: cfg.ctx_len });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(ModelError::TokenOutOfRange { id: bad, vocab_size: cfg.vocab_size });
    }
    Ok(())
}

pub(super) fn layer_norm<T: Scalar>(
    x: &[T],
    g: &[T],
    b: &[T],
    d: usize,
    out: &mut [T],
    mean: &mut [T],
    rstd: &mut [T],
) {
    let eps = T::lit(LN_EPS);
    let dn = T::lit(d as f64);
    for ((xr, or), (m, s)) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)).zip(mean.iter_mut().zip(rstd.iter_mut())) {
        let mu = xr.iter().copied().sum::<T>() / dn;
        let var = xr.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dn;
        let inv = T::one() / (var + eps).sqrt();
        for k in 0..d {
            or[k] = (xr[k] - mu) * inv * g[k] + b[k];
        }
        *m = mu;
        *s = inv;
    }
}

/// Accumulates into `dx`, `dg`, `db`.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward<T: Scalar>(
    dout: &[T],
    x: &[T],
    g: &[T],
    mean: &[T],
    rstd: &[T],
    d: usize,
    dx: &mut [T],
    dg: &mut [T],
    db: &mut [T],
) {
    let dn = T::lit(d as f64);
    let mut xhat = vec![T::zero(); d];
    let mut dxhat = vec![T::zero(); d];
    for (r, (dor, xr)) in dout.chunks_exact(d).zip(x.chunks_exact(d)).enumerate() {
        let (mu, inv) = (mean[r], rstd[r]);
        let mut sum_d = T::zero();
        let mut sum_dx = T::zero();
        for k in 0..d {
            xhat[k] = (xr[k] - mu) * inv;
            dxhat[k] = dor[k] * g[k];
            dg[k] += dor[k] * xhat[k];
            db[k] += dor[k];
            sum_d += dxhat[k];
            sum_dx += dxhat[k] * xhat[k];
        }
        let mean_d = sum_d / dn;
        let mean_dx = sum_dx / dn;
        let dxr = &mut dx[r * d..(r + 1) * d];
        for k in 0..d {
            dxr[k] += inv * (dxhat[k] - mean_d - xhat[k] * mean_dx);
        }
    }
}

pub(super) fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(0.044715);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(0.044715);
    let half = T::lit(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

pub(super) fn add_bias<T: Scalar>(out: &mut [T], bias: &[T]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn col_sum_into<T: Scalar>(x: &[T], width: usize, acc: &mut [T]) {
    for row in x.chunks_exact(width) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
}

/// In-place numerically stable softmax of `row[..len]`; entries past `len` are zeroed.
pub(super) fn softmax_prefix<T: Scalar>(row: &mut [T], len: usize) {
    let max = row[..len].iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in &mut row[..len] {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in &mut row[..len] {
        *v /= sum;
    }
    for v in &mut row[len..] {
        *v = T::zero();
    }
}

fn dropout_mask<T: Scalar, R: Rng>(n: usize, p: f64, rng: &mut R) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - p));
    (0..n).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect()
}

fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
    }
}

struct LayerCache<T> {
    x_in: Vec<T>,
    ln1_mean: Vec<T>,
    ln1_rstd: Vec<T>,
    ln1: Vec<T>,
    qkv: Vec<T>,
    att: Vec<T>,
    att_y: Vec<T>,
    attn_mask: Option<Vec<T>>,
    x_mid: Vec<T>,
    ln2_mean: Vec<T>,
    ln2_rstd: Vec<T>,
    ln2: Vec<T>,
    fc: Vec<T>,
    act: Vec<T>,
    mlp_mask: Option<Vec<T>>,
}

/// Everything the backward pass needs from a forward pass.
pub struct Activations<T> {
    n_seq: usize,
    seq_len: usize,
    tokens: Vec<u32>,
    emb_mask: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
    x_final: Vec<T>,
    lnf_mean: Vec<T>,
    lnf_rstd: Vec<T>,
    lnf: Vec<T>,
    /// `[n, vocab]` logits.
    pub logits: Vec<T>,
}

/// Runs the model over `n_seq` sequences of `seq_len` tokens each.
/// Dropout is applied only when `rng` is given and the config asks for it.
pub fn forward_batch<T: Scalar, R: Rng>(
    params: &Params<T>,
    tokens: &[u32],
    n_seq: usize,
    seq_len: usize,
    rng: Option<&mut R>,
) -> Result<Activations<T>, ModelError> {
    check_tokens(params, tokens, seq_len)?;
    if tokens.len() != n_seq * seq_len {
        return Err(ModelError::Shape(format!("{} tokens for {n_seq}×{seq_len}", tokens.len())));
    }
    let cfg = &params.config;
    let p = &params.data;
    let lay = &params.layout;
    let (d, f, v, nh, hd) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.n_head, cfg.head_dim());
    let (n, l) = (n_seq * seq_len, seq_len);
    let scale = T::one() / T::lit(hd as f64).sqrt();
    let mut rng = rng.filter(|_| cfg.dropout > 0.0);
    let mut mask_for = |len: usize| rng.as_mut().map(|r| dropout_mask::<T, _>(len, cfg.dropout, *r));

    let mut x = vec![T::zero(); n * d];
    for (r, &tok) in tokens.iter().enumerate() {
        let pos = r % l;
        let te = &p[lay.wte + tok as usize * d..][..d];
        let pe = &p[lay.wpe + pos * d..][..d];
        for k in 0..d {
            x[r * d + k] = te[k] + pe[k];
        }
    }
    let emb_mask = mask_for(n * d);
    apply_mask(&mut x, &emb_mask);

    let mut layers = Vec::with_capacity(cfg.n_layer);
    for lo in &lay.layers {
        let LayerOffsets { ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj } = *lo;
        let mut ln1 = vec![T::zero(); n * d];
        let (mut ln1_mean, mut ln1_rstd) = (vec![T::zero(); n], vec![T::zero(); n]);
        layer_norm(&x, &p[ln1_g..][..d], &p[ln1_b..][..d], d, &mut ln1, &mut ln1_mean, &mut ln1_rstd);

        let mut qkv = vec![T::zero(); n * 3 * d];
        gemm(View::rm(&ln1, n, d), View::rm(&p[w_qkv..], d, 3 * d), T::zero(), &mut qkv, 3 * d);
        add_bias(&mut qkv, &p[b_qkv..][..3 * d]);

        let mut att = vec![T::zero(); n_seq * nh * l * l];
        let mut att_y = vec![T::zero(); n * d];
        for s in 0..n_seq {
            let base = s * l * 3 * d;
            for h in 0..nh {
                let a = &mut att[(s * nh + h) * l * l..][..l * l];
                let q = View::strided(&qkv[base + h * hd..], l, hd, 3 * d);
                let k = View::strided(&qkv[base + d + h * hd..], l, hd, 3 * d);
                gemm(q, k.t(), T::zero(), a, l);
                for (i, row) in a.chunks_exact_mut(l).enumerate() {
                    row[..=i].iter_mut().for_each(|v| *v *= scale);
                    softmax_prefix(row, i + 1);
                }
                let vv = View::strided(&qkv[base + 2 * d + h * hd..], l, hd, 3 * d);
                gemm(View::rm(a, l, l), vv, T::zero(), &mut att_y[s * l * d + h * hd..], d);
            }
        }

        let mut attn_out = vec![T::zero(); n * d];
        gemm(View::rm(&att_y, n, d), View::rm(&p[w_o..], d, d), T::zero(), &mut attn_out, d);
        add_bias(&mut attn_out, &p[b_o..][..d]);
        let attn_mask = mask_for(n * d);
        apply_mask(&mut attn_out, &attn_mask);
        let x_mid: Vec<T> = x.iter().zip(&attn_out).map(|(&a, &b)| a + b).collect();

        let mut ln2 = vec![T::zero(); n * d];
        let (mut ln2_mean, mut ln2_rstd) = (vec![T::zero(); n], vec![T::zero(); n]);
        layer_norm(&x_mid, &p[ln2_g..][..d], &p[ln2_b..][..d], d, &mut ln2, &mut ln2_mean, &mut ln2_rstd);

        let mut fc = vec![T::zero(); n * f];
        gemm(View::rm(&ln2, n, d), View::rm(&p[w_fc..], d, f), T::zero(), &mut fc, f);
        add_bias(&mut fc, &p[b_fc..][..f]);
        let act: Vec<T> = fc.iter().map(|&v| gelu(v)).collect();

        let mut mlp = vec![T::zero(); n * d];
        gemm(View::rm(&act, n, f), View::rm(&p[w_proj..], f, d), T::zero(), &mut mlp, d);
        add_bias(&mut mlp, &p[b_proj..][..d]);
        let mlp_mask = mask_for(n * d);
        apply_mask(&mut mlp, &mlp_mask);
        let x_out: Vec<T> = x_mid.iter().zip(&mlp).map(|(&a, &b)| a + b).collect();

        layers.push(LayerCache {
            x_in: std::mem::replace(&mut x, x_out),
            ln1_mean,
            ln1_rstd,
            ln1,
            qkv,
            att,
            att_y,
            attn_mask,
            x_mid,
            ln2_mean,
            ln2_rstd,
            ln2,
            fc,
            act,
            mlp_mask,
        });
    }

    let mut lnf = vec![T::zero(); n * d];
    let (mut lnf_mean, mut lnf_rstd) = (vec![T::zero(); n], vec![T::zero(); n]);
    layer_norm(&x, &p[lay.lnf_g..][..d], &p[lay.lnf_b..][..d], d, &mut lnf, &mut lnf_mean, &mut lnf_rstd);
    let mut logits = vec![T::zero(); n * v];
    gemm(View::rm(&lnf, n, d), View::rm(&p[lay.wte..], v, d).t(), T::zero(), &mut logits, v);

    Ok(Activations {
        n_seq,
        seq_len,
        tokens: tokens.to_vec(),
        emb_mask,
        layers,
        x_final: x,
        lnf_mean,
        lnf_rstd,
        lnf,
        logits,
    })
}

/// Logits `[len, vocab]` for a single sequence, no dropout.
pub fn forward<T: Scalar>(params: &Params<T>, tokens: &[u32]) -> Result<Vec<T>, ModelError> {
    Ok(forward_batch::<T, rand_chacha::ChaCha8Rng>(params, tokens, 1, tokens.len(), None)?.logits)
}

/// Mean next-token cross-entropy (natural log) of `logits` for `tokens`:
/// position `i` predicts `tokens[i + 1]`, for `i` in `0..len - 1`.
pub fn sequence_loss<T: Scalar>(logits: &[T], tokens: &[u32], vocab: usize) -> T {
    assert!(tokens.len() >= 2, "loss needs at least two tokens");
    let n = tokens.len() - 1;
    let total: T = (0..n).map(|i| row_nll(&logits[i * vocab..(i + 1) * vocab], tokens[i + 1])).sum();
    total / T::lit(n as f64)
}

fn row_nll<T: Scalar>(row: &[T], target: u32) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    lse - row[target as usize]
}

/// Mean masked cross-entropy over a batch's logits.
pub fn batch_loss<T: Scalar>(logits: &[T], batch: &Batch, vocab: usize) -> T {
    let count = batch.counted();
    if count == 0 {
        return T::zero();
    }
    let total: T = (0..batch.inputs.len())
        .filter(|&i| batch.mask[i])
        .map(|i| row_nll(&logits[i * vocab..(i + 1) * vocab], batch.targets[i]))
        .sum();
    total / T::lit(count as f64)
}

/// Loss and its exact gradient with respect to every parameter.
pub fn loss_and_grad<T: Scalar, R: Rng>(
    params: &Params<T>,
    batch: &Batch,
    rng: Option<&mut R>,
) -> Result<(T, Vec<T>), ModelError> {
    let acts = forward_batch(params, &batch.inputs, batch.n_seq, batch.seq_len, rng)?;
    let v = params.config.vocab_size;
    let loss = batch_loss(&acts.logits, batch, v);
    let count = batch.counted();
    let mut dlogits = acts.logits.clone();
    let inv = if count == 0 { T::zero() } else { T::one() / T::lit(count as f64) };
    for (i, row) in dlogits.chunks_exact_mut(v).enumerate() {
        if !batch.mask[i] {
            row.iter_mut().for_each(|x| *x = T::zero());
            continue;
        }
        softmax_prefix(row, v);
        row[batch.targets[i] as usize] -= T::one();
        row.iter_mut().for_each(|x| *x *= inv);
    }
    let grads = backward(params, &acts, &dlogits);
    Ok((loss, grads))
}

/// Backpropagates `dlogits` through the activations of one forward pass.
pub fn backward<T: Scalar>(params: &Params<T>, acts: &Activations<T>, dlogits: &[T]) -> Vec<T> {
    let cfg = &params.config;
    let p = &params.data;
    let lay = &params.layout;
    let (d, f, v, nh, hd) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.n_head, cfg.head_dim());
    let (n_seq, l) = (acts.n_seq, acts.seq_len);
    let n = n_seq * l;
    let scale = T::one() / T::lit(hd as f64).sqrt();
    let mut g = params.zeros_like();

    // Output projection (tied to wte) and final norm.
    gemm(View::rm(dlogits, n, v).t(), View::rm(&acts.lnf, n, d), T::one(), &mut g[lay.wte..], d);
    let mut dlnf = vec![T::zero(); n * d];
    gemm(View::rm(dlogits, n, v), View::rm(&p[lay.wte..], v, d), T::zero(), &mut dlnf, d);
    let mut dx = vec![T::zero(); n * d];
    {
        let (head, tail) = g.split_at_mut(lay.lnf_b);
        layer_norm_backward(
            &dlnf,
            &acts.x_final,
            &p[lay.lnf_g..][..d],
            &acts.lnf_mean,
            &acts.lnf_rstd,
            d,
            &mut dx,
            &mut head[lay.lnf_g..][..d],
            &mut tail[..d],
        );
    }

    let mut tmp_d = vec![T::zero(); n * d];
    let mut dfc = vec![T::zero(); n * f];
    let mut dqkv = vec![T::zero(); n * 3 * d];
    let mut dp = vec![T::zero(); l * l];
    for (lo, c) in lay.layers.iter().zip(&acts.layers).rev() {
        // MLP branch.
        let mut dmlp = dx.clone();
        apply_mask(&mut dmlp, &c.mlp_mask);
        col_sum_into(&dmlp, d, &mut g[lo.b_proj..][..d]);
        gemm(View::rm(&c.act, n, f).t(), View::rm(&dmlp, n, d), T::one(), &mut g[lo.w_proj..], d);
        gemm(View::rm(&dmlp, n, d), View::rm(&p[lo.w_proj..], f, d).t(), T::zero(), &mut dfc, f);
        for (dv, &x) in dfc.iter_mut().zip(&c.fc) {
            *dv *= gelu_grad(x);
        }
        col_sum_into(&dfc, f, &mut g[lo.b_fc..][..f]);
        gemm(View::rm(&c.ln2, n, d).t(), View::rm(&dfc, n, f), T::one(), &mut g[lo.w_fc..], f);
        gemm(View::rm(&dfc, n, f), View::rm(&p[lo.w_fc..], d, f).t(), T::zero(), &mut tmp_d, d);
        {
            let (head, tail) = g.split_at_mut(lo.ln2_b);
            layer_norm_backward(
                &tmp_d,
                &c.x_mid,
                &p[lo.ln2_g..][..d],
                &c.ln2_mean,
                &c.ln2_rstd,
                d,
                &mut dx,
                &mut head[lo.ln2_g..][..d],
                &mut tail[..d],
            );
        }

        // Attention branch.
        let mut dattn = dx.clone();
        apply_mask(&mut dattn, &c.attn_mask);
        col_sum_into(&dattn, d, &mut g[lo.b_o..][..d]);
        gemm(View::rm(&c.att_y, n, d).t(), View::rm(&dattn, n, d), T::one(), &mut g[lo.w_o..], d);
        let mut datt_y = vec![T::zero(); n * d];
        gemm(View::rm(&dattn, n, d), View::rm(&p[lo.w_o..], d, d).t(), T::zero(), &mut datt_y, d);

        for s in 0..n_seq {
            let base = s * l * 3 * d;
            for h in 0..nh {
                let a = &c.att[(s * nh + h) * l * l..][..l * l];
                let dy = View::strided(&datt_y[s * l * d + h * hd..], l, hd, d);
                let vv = View::strided(&c.qkv[base + 2 * d + h * hd..], l, hd, 3 * d);
                gemm(dy, vv.t(), T::zero(), &mut dp, l);
                gemm(View::rm(a, l, l).t(), dy, T::zero(), &mut dqkv[base + 2 * d + h * hd..], 3 * d);
                for i in 0..l {
                    let pr = &a[i * l..][..=i];
                    let dr = &mut dp[i * l..(i + 1) * l];
                    let dot: T = pr.iter().zip(dr.iter()).map(|(&x, &y)| x * y).sum();
                    for j in 0..=i {
                        dr[j] = pr[j] * (dr[j] - dot) * scale;
                    }
                    for x in &mut dr[i + 1..] {
                        *x = T::zero();
                    }
                }
                let q = View::strided(&c.qkv[base + h * hd..], l, hd, 3 * d);
                let k = View::strided(&c.qkv[base + d + h * hd..], l, hd, 3 * d);
                gemm(View::rm(&dp, l, l), k, T::zero(), &mut dqkv[base + h * hd..], 3 * d);
                gemm(View::rm(&dp, l, l).t(), q, T::zero(), &mut dqkv[base + d + h * hd..], 3 * d);
            }
        }
        col_sum_into(&dqkv, 3 * d, &mut g[lo.b_qkv..][..3 * d]);
        gemm(View::rm(&c.ln1, n, d).t(), View::rm(&dqkv, n, 3 * d), T::one(), &mut g[lo.w_qkv..], 3 * d);
        gemm(View::rm(&dqkv, n, 3 * d), View::rm(&p[lo.w_qkv..], d, 3 * d).t(), T::zero(), &mut tmp_d, d);
        {
            let (head, tail) = g.split_at_mut(lo.ln1_b);
            layer_norm_backward(
                &tmp_d,
                &c.x_in,
                &p[lo.ln1_g..][..d],
                &c.ln1_mean,
                &c.ln1_rstd,
                d,
                &mut dx,
                &mut head[lo.ln1_g..][..d],
                &mut tail[..d],
            );
        }
    }

    apply_mask(&mut dx, &acts.emb_mask);
    for (r, &tok) in acts.tokens.iter().enumerate() {
        let pos = r % l;
        for k in 0..d {
            let dv = dx[r * d + k];
            g[lay.wte + tok as usize * d + k] += dv;
            g[lay.wpe + pos * d + k] += dv;
        }
    }
    g
}
