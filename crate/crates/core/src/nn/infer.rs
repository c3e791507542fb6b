//! Incremental decoding with a key/value cache.

use super::model::{add_bias, gelu, layer_norm, softmax_prefix};
use super::params::Params;
use super::scalar::{gemm, View};
use super::{ModelError, Scalar};

/// Decoding state for one sequence. Each [`Session::push`] costs one
/// token's worth of compute instead of re-running the whole prefix.
pub struct Session<'p, T> {
    params: &'p Params<T>,
    /// Per layer: `[ctx_len, d]` keys and values.
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
}

impl<'p, T: Scalar> Session<'p, T> {
    pub fn new(params: &'p Params<T>) -> Self {
        let cfg = &params.config;
        let size = cfg.ctx_len * cfg.d_model;
        Self {
            params,
            keys: (0..cfg.n_layer).map(|_| vec![T::zero(); size]).collect(),
            values: (0..cfg.n_layer).map(|_| vec![T::zero(); size]).collect(),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn remaining(&self) -> usize {
        self.params.config.ctx_len - self.len
    }

    pub fn reset(&mut self) {
        self.len = 0;
    }

    /// Feeds a prompt and returns the logits after its last token.
    pub fn prefill(&mut self, tokens: &[u32]) -> Result<Vec<T>, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::Shape("empty prompt".into()));
        }
        let mut logits = Vec::new();
        for &t in tokens {
            logits = self.push(t)?;
        }
        Ok(logits)
    }

    /// Appends one token and returns the next-token logits `[vocab]`.
    pub fn push(&mut self, token: u32) -> Result<Vec<T>, ModelError> {
        let params = self.params;
        let cfg = &params.config;
        let (d, f, v, nh, hd) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.n_head, cfg.head_dim());
        if self.len >= cfg.ctx_len {
            return Err(ModelError::ContextOverflow { len: self.len + 1, ctx_len: cfg.ctx_len });
        }
        if token as usize >= v {
            return Err(ModelError::TokenOutOfRange { id: token, vocab_size: v });
        }
        let p = &params.data;
        let lay = &params.layout;
        let pos = self.len;
        let scale = T::one() / T::lit(hd as f64).sqrt();
        let mut x: Vec<T> = (0..d).map(|k| p[lay.wte + token as usize * d + k] + p[lay.wpe + pos * d + k]).collect();
        let (mut mean, mut rstd) = ([T::zero()], [T::zero()]);
        let mut h = vec![T::zero(); d];
        let mut qkv = vec![T::zero(); 3 * d];
        let mut y = vec![T::zero(); d];
        let mut tmp = vec![T::zero(); d];
        let mut fc = vec![T::zero(); f];
        let mut scores = vec![T::zero(); pos + 1];

        for (li, lo) in lay.layers.iter().enumerate() {
            layer_norm(&x, &p[lo.ln1_g..][..d], &p[lo.ln1_b..][..d], d, &mut h, &mut mean, &mut rstd);
            gemm(View::rm(&h, 1, d), View::rm(&p[lo.w_qkv..], d, 3 * d), T::zero(), &mut qkv, 3 * d);
            add_bias(&mut qkv, &p[lo.b_qkv..][..3 * d]);
            let (kc, vc) = (&mut self.keys[li], &mut self.values[li]);
            kc[pos * d..(pos + 1) * d].copy_from_slice(&qkv[d..2 * d]);
            vc[pos * d..(pos + 1) * d].copy_from_slice(&qkv[2 * d..]);
            for head in 0..nh {
                let q = &qkv[head * hd..(head + 1) * hd];
                for (j, s) in scores.iter_mut().enumerate() {
                    let k = &kc[j * d + head * hd..][..hd];
                    *s = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<T>() * scale;
                }
                softmax_prefix(&mut scores, pos + 1);
                let out = &mut y[head * hd..(head + 1) * hd];
                out.iter_mut().for_each(|o| *o = T::zero());
                for (j, &w) in scores.iter().enumerate() {
                    for (o, &vv) in out.iter_mut().zip(&vc[j * d + head * hd..][..hd]) {
                        *o += w * vv;
                    }
                }
            }
            gemm(View::rm(&y, 1, d), View::rm(&p[lo.w_o..], d, d), T::zero(), &mut tmp, d);
            add_bias(&mut tmp, &p[lo.b_o..][..d]);
            x.iter_mut().zip(&tmp).for_each(|(a, &b)| *a += b);

            layer_norm(&x, &p[lo.ln2_g..][..d], &p[lo.ln2_b..][..d], d, &mut h, &mut mean, &mut rstd);
            gemm(View::rm(&h, 1, d), View::rm(&p[lo.w_fc..], d, f), T::zero(), &mut fc, f);
            add_bias(&mut fc, &p[lo.b_fc..][..f]);
            fc.iter_mut().for_each(|a| *a = gelu(*a));
            gemm(View::rm(&fc, 1, f), View::rm(&p[lo.w_proj..], f, d), T::zero(), &mut tmp, d);
            add_bias(&mut tmp, &p[lo.b_proj..][..d]);
            x.iter_mut().zip(&tmp).for_each(|(a, &b)| *a += b);
        }
        layer_norm(&x, &p[lay.lnf_g..][..d], &p[lay.lnf_b..][..d], d, &mut h, &mut mean, &mut rstd);
        let mut logits = vec![T::zero(); v];
        gemm(View::rm(&h, 1, d), View::rm(&p[lay.wte..], v, d).t(), T::zero(), &mut logits, v);
        self.len += 1;
        Ok(logits)
    }
}
