//! Data splits, sequence packing, and the training loops behind pretraining,
//! fine-tuning and learning curves.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bpe::{Tokenizer, END_OF_TEXT};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, batch_loss, forward_batch, loss_and_grad, AdamConfig, AdamState, Batch, Checkpoint, Params,
    TransformerConfig,
};
use crate::purchase::derive_seed;

/// Fractions of journeys assigned to train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train: 0.64, validation: 0.16, test: 0.20, seed: 0 }
    }
}

/// Journey indices per split, each list in shuffled order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split fractions {}/{}/{} must be in [0, 1] and sum to 1",
                self.train, self.validation, self.test
            )));
        }
        Ok(())
    }

    /// Shuffles `0..n` with the seed and cuts it by the fractions.
    pub fn split(&self, n: usize) -> Result<Split> {
        self.validate()?;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        let n_train = (n as f64 * self.train).round() as usize;
        let n_val = ((n as f64 * self.validation).round() as usize).min(n - n_train);
        let test = idx.split_off(n_train + n_val);
        let validation = idx.split_off(n_train);
        Ok(Split { train: idx, validation, test })
    }
}

/// `ctx_len` tokens of the packed stream; positions from `len` on are padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub tokens: Vec<u32>,
    pub len: usize,
}

impl Window {
    /// Next-token predictions this window contributes.
    pub fn predictions(&self) -> usize {
        self.len.saturating_sub(1)
    }
}

/// Token stream of `lines`: each line preceded by the end-of-text token.
pub fn token_stream<S: AsRef<str>>(tokenizer: &Tokenizer, lines: &[S]) -> Vec<u32> {
    tokenizer.encode_corpus(lines.iter().map(|l| l.as_ref()))
}

/// Cuts the stream into consecutive `ctx_len` windows; the last is padded.
pub fn pack_sequences(stream: &[u32], ctx_len: usize) -> Result<Vec<Window>> {
    if stream.is_empty() {
        return Err(Error::InvalidArgument("cannot pack an empty corpus".into()));
    }
    if ctx_len < 2 {
        return Err(Error::InvalidArgument(format!("ctx_len {ctx_len} too small to pack")));
    }
    Ok(stream
        .chunks(ctx_len)
        .map(|c| {
            let mut tokens = c.to_vec();
            tokens.resize(ctx_len, END_OF_TEXT);
            Window { tokens, len: c.len() }
        })
        .collect())
}

/// Cuts the stream at end-of-text tokens and fills windows with whole
/// journeys, so every window starts at a journey boundary. A journey longer
/// than `ctx_len` is split into consecutive pieces.
pub fn pack_journeys(stream: &[u32], ctx_len: usize) -> Result<Vec<Window>> {
    if stream.is_empty() {
        return Err(Error::InvalidArgument("cannot pack an empty corpus".into()));
    }
    if ctx_len < 2 {
        return Err(Error::InvalidArgument(format!("ctx_len {ctx_len} too small to pack")));
    }
    let mut windows = Vec::new();
    let mut current: Vec<u32> = Vec::with_capacity(ctx_len);
    let flush = |current: &mut Vec<u32>, windows: &mut Vec<Window>| {
        if !current.is_empty() {
            let len = current.len();
            let mut tokens = std::mem::take(current);
            tokens.resize(ctx_len, END_OF_TEXT);
            windows.push(Window { tokens, len });
        }
    };
    let mut start = 0;
    while start < stream.len() {
        let end = stream[start + 1..].iter().position(|&t| t == END_OF_TEXT).map_or(stream.len(), |p| start + 1 + p);
        let journey = &stream[start..end];
        if current.len() + journey.len() > ctx_len {
            flush(&mut current, &mut windows);
        }
        let mut pieces = journey.chunks(ctx_len).peekable();
        while let Some(piece) = pieces.next() {
            if pieces.peek().is_some() {
                windows.push(Window { tokens: piece.to_vec(), len: ctx_len });
            } else {
                current.extend_from_slice(piece);
            }
        }
        start = end;
    }
    flush(&mut current, &mut windows);
    Ok(windows)
}

/// How the token stream is cut into training windows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Packing {
    /// [`pack_sequences`].
    #[default]
    Contiguous,
    /// [`pack_journeys`].
    Journeys,
}

impl Packing {
    pub fn pack(self, stream: &[u32], ctx_len: usize) -> Result<Vec<Window>> {
        match self {
            Packing::Contiguous => pack_sequences(stream, ctx_len),
            Packing::Journeys => pack_journeys(stream, ctx_len),
        }
    }
}

impl std::str::FromStr for Packing {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "contiguous" => Ok(Packing::Contiguous),
            "journeys" => Ok(Packing::Journeys),
            other => Err(format!("unknown packing {other:?}, expected contiguous or journeys")),
        }
    }
}

/// Stacks windows into one batch with padding masked out. The batch is cut
/// to its longest window; causal attention makes the cut exact.
pub fn make_batch(windows: &[&Window]) -> Batch {
    let l = windows.iter().map(|w| w.len).max().unwrap_or(0).max(1);
    let mut inputs = Vec::with_capacity(windows.len() * l);
    let mut targets = Vec::with_capacity(windows.len() * l);
    let mut mask = Vec::with_capacity(windows.len() * l);
    for w in windows {
        inputs.extend_from_slice(&w.tokens[..l]);
        for i in 0..l {
            let live = i + 1 < w.len;
            targets.push(if live { w.tokens[i + 1] } else { END_OF_TEXT });
            mask.push(live);
        }
    }
    Batch { n_seq: windows.len(), seq_len: l, inputs, targets, mask }
}

/// Order in which windows are visited in `epoch`.
pub fn epoch_order(n_windows: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_windows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64)));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Seeds window order and dropout.
    pub seed: u64,
    #[serde(default)]
    pub packing: Packing,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 16, adam: AdamConfig::default(), seed: 0, packing: Packing::Contiguous }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    pub validation_loss: f64,
}

/// Summary of one training run, written as the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub model: TransformerConfig,
    pub train: TrainConfig,
    pub tokenizer_hash: String,
    pub train_windows: usize,
    pub validation_windows: usize,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub checkpoint: Option<PathBuf>,
}

impl TrainRun {
    pub fn final_validation_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |e| e.validation_loss)
    }

    pub fn best_validation_loss(&self) -> f64 {
        self.history.get(self.best_epoch).map_or(f64::NAN, |e| e.validation_loss)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("run serializes");
        crate::io::write_atomic(path, text.as_bytes())
    }
}

/// Mean next-token cross-entropy over all unpadded positions of `windows`.
pub fn evaluate_loss(params: &Params<f32>, windows: &[Window], batch_size: usize) -> Result<f64> {
    let refs: Vec<&Window> = windows.iter().collect();
    let (mut total, mut count) = (0.0f64, 0usize);
    for chunk in refs.chunks(batch_size.max(1)) {
        let batch = make_batch(chunk);
        let n = batch.counted();
        if n == 0 {
            continue;
        }
        let acts = forward_batch::<f32, ChaCha8Rng>(params, &batch.inputs, batch.n_seq, batch.seq_len, None)?;
        total += batch_loss(&acts.logits, &batch, params.config.vocab_size) as f64 * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no positions to evaluate".into()));
    }
    Ok(total / count as f64)
}

/// Result of [`train`]: the weights with the best validation loss and the run record.
pub struct Trained {
    pub best: Params<f32>,
    pub last: Params<f32>,
    pub run: TrainRun,
}

/// Adam training from `init` with fresh optimizer state.
///
/// After every epoch the validation loss is measured; the best weights are
/// kept and, when `checkpoint` is given, written there. A non-finite loss or
/// gradient aborts with [`Error::Diverged`], leaving the last written
/// checkpoint in place.
pub fn train(
    init: Params<f32>,
    train_windows: &[Window],
    validation_windows: &[Window],
    cfg: &TrainConfig,
    tokenizer_hash: &str,
    checkpoint: Option<&Path>,
) -> Result<Trained> {
    if train_windows.is_empty() || validation_windows.is_empty() {
        return Err(Error::InvalidArgument("training needs train and validation windows".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
    }
    let mut params = init;
    let mut state = AdamState::new(params.data.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Params<f32>)> = None;

    for epoch in 0..cfg.epochs {
        let order = epoch_order(train_windows.len(), cfg.seed, epoch);
        let (mut sum, mut count) = (0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let windows: Vec<&Window> = chunk.iter().map(|&i| &train_windows[i]).collect();
            let batch = make_batch(&windows);
            let n = batch.counted();
            if n == 0 {
                continue;
            }
            let (loss, grads) = loss_and_grad(&params, &batch, Some(&mut rng))?;
            let step = state.step + 1;
            if !loss.is_finite() {
                return Err(Error::Diverged { step, reason: format!("loss is {loss}") });
            }
            adam_step(&mut params.data, &grads, &mut state, &cfg.adam)
                .map_err(|e| Error::Diverged { step, reason: e.to_string() })?;
            sum += loss as f64 * n as f64;
            count += n;
        }
        let validation_loss = evaluate_loss(&params, validation_windows, cfg.batch_size)?;
        if !validation_loss.is_finite() {
            return Err(Error::Diverged { step: state.step, reason: "validation loss is not finite".into() });
        }
        let train_loss = sum / count.max(1) as f64;
        log::info!("epoch {} step {} train {train_loss:.4} validation {validation_loss:.4}", epoch + 1, state.step);
        history.push(EpochStats { epoch: epoch + 1, steps: state.step, train_loss, validation_loss });
        if best.as_ref().is_none_or(|(_, v, _)| validation_loss < *v) {
            if let Some(path) = checkpoint {
                Checkpoint::new(params.clone(), state.step, tokenizer_hash).save(path)?;
            }
            best = Some((epoch, validation_loss, params.clone()));
        }
    }
    let (best_epoch, _, best_params) = best.expect("at least one epoch");
    let run = TrainRun {
        model: params.config.clone(),
        train: cfg.clone(),
        tokenizer_hash: tokenizer_hash.to_string(),
        train_windows: train_windows.len(),
        validation_windows: validation_windows.len(),
        history,
        best_epoch,
        checkpoint: checkpoint.map(Path::to_path_buf),
    };
    Ok(Trained { best: best_params, last: params, run })
}

/// Trains a fresh model on tokenized journey lines.
pub fn pretrain<S: AsRef<str>>(
    tokenizer: &Tokenizer,
    train_lines: &[S],
    validation_lines: &[S],
    model: &TransformerConfig,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<Trained> {
    check_vocab(tokenizer, model)?;
    let train_w = cfg.packing.pack(&token_stream(tokenizer, train_lines), model.ctx_len)?;
    let val_w = cfg.packing.pack(&token_stream(tokenizer, validation_lines), model.ctx_len)?;
    train(Params::init(model)?, &train_w, &val_w, cfg, &tokenizer.hash(), checkpoint)
}

/// Continues training `pretrained` on the first `n_samples` of `train_lines`
/// with a fresh optimizer.
pub fn finetune<S: AsRef<str>>(
    pretrained: &Params<f32>,
    tokenizer: &Tokenizer,
    train_lines: &[S],
    validation_lines: &[S],
    n_samples: usize,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<Trained> {
    if n_samples < 1 || n_samples > train_lines.len() {
        return Err(Error::InvalidArgument(format!(
            "n_samples {n_samples} must be between 1 and the {} available journeys",
            train_lines.len()
        )));
    }
    check_vocab(tokenizer, &pretrained.config)?;
    let ctx = pretrained.config.ctx_len;
    let train_w = cfg.packing.pack(&token_stream(tokenizer, &train_lines[..n_samples]), ctx)?;
    let val_w = cfg.packing.pack(&token_stream(tokenizer, validation_lines), ctx)?;
    train(pretrained.clone(), &train_w, &val_w, cfg, &tokenizer.hash(), checkpoint)
}

fn check_vocab(tokenizer: &Tokenizer, model: &TransformerConfig) -> Result<()> {
    if tokenizer.len() > model.vocab_size {
        return Err(Error::IncompatibleCheckpoint(format!(
            "tokenizer has {} ids but the model only {}",
            tokenizer.len(),
            model.vocab_size
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveMode {
    Finetune,
    Scratch,
}

impl std::fmt::Display for CurveMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CurveMode::Finetune => "finetune",
            CurveMode::Scratch => "scratch",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub size: usize,
    pub mode: CurveMode,
    pub train_loss: f64,
    pub validation_loss: f64,
}

/// Powers of two from 8 up to `full`, plus `full` itself.
pub fn default_sizes(full: usize) -> Vec<usize> {
    let mut sizes: Vec<usize> =
        std::iter::successors(Some(8usize), |s| s.checked_mul(2)).take_while(|&s| s < full).collect();
    if full >= 1 {
        sizes.push(full);
    }
    sizes
}

/// One independent run per (size, mode). Fine-tuning starts from
/// `pretrained`; scratch runs start from a fresh init of the same shape.
/// Subsets are prefixes of `train_lines`, so larger sets contain smaller ones.
/// `on_run` sees every finished run with its final weights.
#[allow(clippy::too_many_arguments)]
pub fn learning_curve<S: AsRef<str>>(
    pretrained: &Params<f32>,
    tokenizer: &Tokenizer,
    train_lines: &[S],
    validation_lines: &[S],
    sizes: &[usize],
    modes: &[CurveMode],
    cfg: &TrainConfig,
    mut on_run: impl FnMut(&CurveRow, &Params<f32>),
) -> Result<Vec<CurveRow>> {
    check_vocab(tokenizer, &pretrained.config)?;
    let ctx = pretrained.config.ctx_len;
    let val_w = cfg.packing.pack(&token_stream(tokenizer, validation_lines), ctx)?;
    let mut rows = Vec::with_capacity(sizes.len() * modes.len());
    for &size in sizes {
        if size < 1 || size > train_lines.len() {
            return Err(Error::InvalidArgument(format!("size {size} outside 1..={}", train_lines.len())));
        }
        let train_w = cfg.packing.pack(&token_stream(tokenizer, &train_lines[..size]), ctx)?;
        for &mode in modes {
            let init = match mode {
                CurveMode::Finetune => pretrained.clone(),
                CurveMode::Scratch => Params::init(&TransformerConfig {
                    seed: derive_seed(pretrained.config.seed, size as u64),
                    ..pretrained.config.clone()
                })?,
            };
            let run_cfg = TrainConfig { seed: derive_seed(cfg.seed, size as u64), ..cfg.clone() };
            let out = train(init, &train_w, &val_w, &run_cfg, &tokenizer.hash(), None)?;
            let last = out.run.history.last().expect("epochs > 0");
            let row = CurveRow { size, mode, train_loss: last.train_loss, validation_loss: last.validation_loss };
            log::info!("curve size {size} {mode}: validation {:.4}", row.validation_loss);
            on_run(&row, &out.last);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// `size,mode,train_loss,validation_loss` table.
pub fn curve_csv(rows: &[CurveRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(format!("curve: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Format(format!("curve: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_deterministic_and_exhaustive() {
        let spec = SplitSpec { seed: 5, ..SplitSpec::default() };
        let s = spec.split(1000).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (640, 160, 200));
        assert_eq!(s, spec.split(1000).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_ne!(s, SplitSpec { seed: 6, ..spec }.split(1000).unwrap());
        assert!(SplitSpec { train: 0.7, ..spec }.split(10).is_err());
    }

    #[test]
    fn packing_counts() {
        let stream: Vec<u32> = (0..10).collect();
        let w = pack_sequences(&stream, 8).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].len, 2);
        assert_eq!(&w[1].tokens[2..], &[END_OF_TEXT; 6]);
        let predictions: usize = w.iter().map(Window::predictions).sum();
        assert_eq!(predictions, stream.len() - w.len());
        let b = make_batch(&w.iter().collect::<Vec<_>>());
        assert_eq!(b.counted(), predictions);
        assert_eq!(b.targets[0], 1);
        assert!(pack_sequences(&[], 8).is_err());
    }

    #[test]
    fn journey_packing_keeps_journeys_whole() {
        let e = END_OF_TEXT;
        let stream = [e, 1, 2, 3, e, 4, 5, e, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, e, 16];
        let w = pack_journeys(&stream, 8).unwrap();
        let live: Vec<&[u32]> = w.iter().map(|w| &w.tokens[..w.len]).collect();
        assert_eq!(live, vec![&[e, 1, 2, 3, e, 4, 5][..], &[e, 6, 7, 8, 9, 10, 11, 12], &[13, 14, 15, e, 16]]);
        assert!(w.iter().all(|w| w.tokens.len() == 8));
        let flat: Vec<u32> = live.concat();
        assert_eq!(flat, stream);
        assert!(pack_journeys(&[], 8).is_err());
        assert_eq!("journeys".parse::<Packing>(), Ok(Packing::Journeys));
    }

    #[test]
    fn batch_is_cut_to_longest_window() {
        let stream: Vec<u32> = (0..10).collect();
        let w = pack_sequences(&stream, 8).unwrap();
        let b = make_batch(&[&w[1]]);
        assert_eq!((b.seq_len, b.inputs.len(), b.counted()), (2, 2, 1));
        assert_eq!(make_batch(&[&w[1], &w[0]]).seq_len, 8);
    }

    #[test]
    fn window_order_is_seeded() {
        assert_eq!(epoch_order(50, 1, 0), epoch_order(50, 1, 0));
        assert_ne!(epoch_order(50, 1, 0), epoch_order(50, 1, 1));
    }

    #[test]
    fn sizes_double_to_full() {
        assert_eq!(default_sizes(100), vec![8, 16, 32, 64, 100]);
        assert_eq!(default_sizes(64), vec![8, 16, 32, 64]);
    }
}
