//! Prompted sampling of journeys and conversion back to trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bpe::{Tokenizer, END_OF_TEXT};
use crate::codec::Codec;
use crate::corpus::{journey_body, parse_journey_text, Journey, TERMINATOR};
use crate::error::{Error, Result};
use crate::nn::{Params, Session};
use crate::purchase::{derive_seed, ScannerItem, TimedPoint, Trajectory};

/// Number of leading samples in a prompt: 30 s at 5 s sampling.
pub const PROMPT_POINTS: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub temperature: f64,
    /// 0 disables top-k filtering.
    pub top_k: usize,
    pub top_p: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { temperature: 1.0, top_k: 0, top_p: 0.95, max_new_tokens: 512, seed: 0 }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature {} must be positive", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidArgument(format!("top_p {} must lie in (0, 1]", self.top_p)));
        }
        Ok(())
    }
}

/// Serialized first `k` samples of `journey`, purchases included, without terminator.
pub fn make_prompt(journey: &Journey, k: usize) -> Result<String> {
    if k == 0 || journey.len() < k {
        return Err(Error::InvalidArgument(format!("prompt needs {k} points, journey has {}", journey.len())));
    }
    Ok(journey_body(&journey.prefix(k)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Terminator,
    EndOfText,
    MaxTokens,
    ContextOverflow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub prompt_id: usize,
    /// Prompt followed by the sampled continuation.
    pub text: String,
    pub new_tokens: usize,
    pub stop: StopReason,
    /// `None` when the text parses as a journey, otherwise the parser's complaint.
    pub error: Option<String>,
    #[serde(skip)]
    pub journey: Option<Journey>,
}

impl GenerationResult {
    pub fn is_valid(&self) -> bool {
        self.journey.is_some()
    }
}

/// Turns logits into a sampled id under temperature, top-k and top-p.
/// Ids at or beyond `allowed` are never drawn.
pub fn sample_logits<R: Rng>(logits: &[f32], allowed: usize, cfg: &SamplingConfig, rng: &mut R) -> u32 {
    let n = allowed.min(logits.len());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    if cfg.top_k > 0 {
        order.truncate(cfg.top_k);
    }
    let max = logits[order[0]] as f64;
    let mut probs: Vec<f64> = order.iter().map(|&i| ((logits[i] as f64 - max) / cfg.temperature).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    if cfg.top_p < 1.0 {
        let mut acc = 0.0;
        let mut keep = probs.len();
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if acc >= cfg.top_p {
                keep = i + 1;
                break;
            }
        }
        probs.truncate(keep);
        order.truncate(keep);
    }
    let total: f64 = probs.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (&i, &p) in order.iter().zip(&probs) {
        if r < p {
            return i as u32;
        }
        r -= p;
    }
    *order.last().expect("at least one candidate") as u32
}

/// Continues `prompt` until the terminator, end of text, the token budget or
/// the context runs out. Deterministic in `cfg.seed`.
pub fn sample(
    params: &Params<f32>,
    tokenizer: &Tokenizer,
    prompt: &str,
    cfg: &SamplingConfig,
) -> Result<GenerationResult> {
    sample_with_id(params, tokenizer, prompt, cfg, 0, cfg.seed)
}

fn sample_with_id(
    params: &Params<f32>,
    tokenizer: &Tokenizer,
    prompt: &str,
    cfg: &SamplingConfig,
    prompt_id: usize,
    seed: u64,
) -> Result<GenerationResult> {
    cfg.validate()?;
    if tokenizer.len() > params.config.vocab_size {
        return Err(Error::IncompatibleCheckpoint(format!(
            "tokenizer has {} ids, model vocabulary {}",
            tokenizer.len(),
            params.config.vocab_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = vec![END_OF_TEXT];
    ids.extend(tokenizer.encode(prompt));
    let mut session = Session::new(params);
    if ids.len() > params.config.ctx_len {
        return Ok(finish(prompt_id, prompt.to_string(), 0, StopReason::ContextOverflow));
    }
    let mut logits = session.prefill(&ids)?;
    let mut text = prompt.as_bytes().to_vec();
    let terminator = format!(" {TERMINATOR}");
    let mut new_tokens = 0;
    let stop = loop {
        if new_tokens >= cfg.max_new_tokens {
            break StopReason::MaxTokens;
        }
        let id = sample_logits(&logits, tokenizer.len(), cfg, &mut rng);
        new_tokens += 1;
        if id == END_OF_TEXT {
            break StopReason::EndOfText;
        }
        text.extend_from_slice(tokenizer.piece(id).unwrap_or_default());
        if text.ends_with(terminator.as_bytes()) {
            break StopReason::Terminator;
        }
        if session.remaining() == 0 {
            break StopReason::ContextOverflow;
        }
        logits = session.push(id)?;
    };
    Ok(finish(prompt_id, String::from_utf8_lossy(&text).into_owned(), new_tokens, stop))
}

fn finish(prompt_id: usize, text: String, new_tokens: usize, stop: StopReason) -> GenerationResult {
    let (journey, error) = match parse_journey_text(&text) {
        Ok(j) => (Some(j), None),
        Err(e) => (None, Some(e.to_string())),
    };
    GenerationResult { prompt_id, text, new_tokens, stop, error, journey }
}

/// Seed used for prompt `index` of a batch.
pub fn item_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, index as u64)
}

/// One generation per prompt with per-item seeds derived from `cfg.seed`.
/// A failing item is recorded with its error and the batch continues.
pub fn generate_batch(
    params: &Params<f32>,
    tokenizer: &Tokenizer,
    prompts: &[String],
    cfg: &SamplingConfig,
) -> Result<Vec<GenerationResult>> {
    cfg.validate()?;
    Ok(prompts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            sample_with_id(params, tokenizer, p, cfg, i, item_seed(cfg.seed, i)).unwrap_or_else(|e| GenerationResult {
                prompt_id: i,
                text: p.clone(),
                new_tokens: 0,
                stop: StopReason::ContextOverflow,
                error: Some(e.to_string()),
                journey: None,
            })
        })
        .collect())
}

/// Fraction of results that parse.
pub fn validity_rate(results: &[GenerationResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().filter(|r| r.is_valid()).count() as f64 / results.len() as f64
}

/// One JSON object per line.
pub fn results_jsonl(results: &[GenerationResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(r).expect("result serializes"));
        out.push('\n');
    }
    out
}

/// Places a journey at cell centers, 5 s apart from `start_time`, and lists
/// its purchases as checkout items in `category` terms of the visited cell.
pub fn journey_to_trajectory(
    journey: &Journey,
    codec: &Codec,
    customer_id: &str,
    start_time: f64,
    period: f64,
) -> Trajectory {
    let points = journey
        .codes
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let p = codec.code_center(c);
            TimedPoint { t: i as f64 * period, x: p.x, y: p.y }
        })
        .collect();
    Trajectory { customer_id: customer_id.to_string(), start_time, points }
}

/// Checkout items for a decoded journey: one per purchase point, labeled by
/// the zone the point falls in (`unzoned` otherwise).
pub fn journey_scanner_items(
    journey: &Journey,
    traj: &Trajectory,
    layout: &crate::layout::StoreLayout,
) -> Vec<ScannerItem> {
    let txn_time = traj.checkout_time();
    journey
        .events
        .iter()
        .map(|e| {
            let p = traj.points[e.point_index].pos();
            let category =
                layout.zone_at(p).and_then(|z| z.categories.first().cloned()).unwrap_or_else(|| "unzoned".to_string());
            ScannerItem { txn_time, category, quantity: e.count }
        })
        .collect()
}
