use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ModelError, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub n_layer: usize,
    pub n_head: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub ctx_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
    /// Dropout on embeddings and residual branches during training.
    #[serde(default)]
    pub dropout: f64,
}

impl TransformerConfig {
    /// GPT-2 small shape.
    pub fn gpt2_small(vocab_size: usize) -> Self {
        Self { n_layer: 12, n_head: 12, d_model: 768, d_ff: 3072, ctx_len: 1024, vocab_size, seed: 0, dropout: 0.0 }
    }

    /// Desk-scale model used for the synthetic experiments.
    pub fn desk(vocab_size: usize) -> Self {
        Self { n_layer: 4, n_head: 4, d_model: 128, d_ff: 512, ctx_len: 256, vocab_size, seed: 0, dropout: 0.0 }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_head
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.n_layer == 0 || self.n_head == 0 || self.d_model == 0 || self.d_ff == 0 || self.vocab_size == 0 {
            return bad("all dimensions must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_head) {
            return bad(format!("d_model {} not divisible by n_head {}", self.d_model, self.n_head));
        }
        if self.ctx_len < 8 {
            return bad(format!("ctx_len {} below 8", self.ctx_len));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Closed form of [`ParamLayout::total`]: `V·d + C·d + n_layer·(4d² + 2d·ff + 9d + ff) + 2d`.
    pub fn param_count(&self) -> usize {
        let (v, c, d, f) = (self.vocab_size, self.ctx_len, self.d_model, self.d_ff);
        let per_layer = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
        v * d + c * d + self.n_layer * per_layer + 2 * d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w_qkv: usize,
    pub b_qkv: usize,
    pub w_o: usize,
    pub b_o: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w_fc: usize,
    pub b_fc: usize,
    pub w_proj: usize,
    pub b_proj: usize,
}

/// A named, shaped slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamGroup {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Offsets of every tensor inside the flat parameter vector.
///
/// Linear weights are stored input-major (`[in, out]`) so a layer is `x · W`.
/// The token embedding `[vocab, d]` doubles as the output projection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub wte: usize,
    pub wpe: usize,
    pub layers: Vec<LayerOffsets>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub groups: Vec<ParamGroup>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &TransformerConfig) -> Self {
        let (v, c, d, f) = (cfg.vocab_size, cfg.ctx_len, cfg.d_model, cfg.d_ff);
        let mut groups = Vec::new();
        let mut at = 0usize;
        let mut take = |name: String, shape: Vec<usize>| {
            let offset = at;
            at += shape.iter().product::<usize>();
            groups.push(ParamGroup { name, offset, shape });
            offset
        };
        let wte = take("wte".into(), vec![v, d]);
        let wpe = take("wpe".into(), vec![c, d]);
        let layers = (0..cfg.n_layer)
            .map(|l| LayerOffsets {
                ln1_g: take(format!("h{l}.ln1.g"), vec![d]),
                ln1_b: take(format!("h{l}.ln1.b"), vec![d]),
                w_qkv: take(format!("h{l}.attn.w_qkv"), vec![d, 3 * d]),
                b_qkv: take(format!("h{l}.attn.b_qkv"), vec![3 * d]),
                w_o: take(format!("h{l}.attn.w_o"), vec![d, d]),
                b_o: take(format!("h{l}.attn.b_o"), vec![d]),
                ln2_g: take(format!("h{l}.ln2.g"), vec![d]),
                ln2_b: take(format!("h{l}.ln2.b"), vec![d]),
                w_fc: take(format!("h{l}.mlp.w_fc"), vec![d, f]),
                b_fc: take(format!("h{l}.mlp.b_fc"), vec![f]),
                w_proj: take(format!("h{l}.mlp.w_proj"), vec![f, d]),
                b_proj: take(format!("h{l}.mlp.b_proj"), vec![d]),
            })
            .collect();
        let lnf_g = take("lnf.g".into(), vec![d]);
        let lnf_b = take("lnf.b".into(), vec![d]);
        Self { wte, wpe, layers, lnf_g, lnf_b, groups, total: at }
    }
}

/// All weights of a model, flat, plus their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub config: TransformerConfig,
    pub layout: ParamLayout,
    pub data: Vec<T>,
}

impl<T: Scalar> Params<T> {
    /// GPT-2 initialization: N(0, 0.02) weights, residual output projections
    /// scaled by 1/√(2·n_layer), zero biases, unit norm gains.
    pub fn init(config: &TransformerConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        let mut data = vec![T::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let std = 0.02;
        let resid_std = std / (2.0 * config.n_layer as f64).sqrt();
        let mut fill = |data: &mut [T], g: &ParamGroup, sd: f64| {
            let normal = Normal::new(0.0, sd).expect("valid std");
            for v in &mut data[g.offset..g.offset + g.len()] {
                *v = T::lit(normal.sample(&mut rng));
            }
        };
        for g in &layout.groups {
            let name = g.name.as_str();
            if name.ends_with(".g") {
                data[g.offset..g.offset + g.len()].iter_mut().for_each(|v| *v = T::one());
            } else if name.ends_with("w_o") || name.ends_with("w_proj") {
                fill(&mut data, g, resid_std);
            } else if name == "wte" || name == "wpe" || name.contains(".w_") {
                fill(&mut data, g, std);
            }
        }
        Ok(Self { config: config.clone(), layout, data })
    }

    pub fn from_data(config: &TransformerConfig, data: Vec<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        if data.len() != layout.total {
            return Err(ModelError::Shape(format!("expected {} parameters, got {}", layout.total, data.len())));
        }
        Ok(Self { config: config.clone(), layout, data })
    }

    pub fn zeros_like(&self) -> Vec<T> {
        vec![T::zero(); self.data.len()]
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.layout.groups.iter().find(|g| g.name == name)
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|v| U::lit(v.to_f64().expect("finite"))).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
