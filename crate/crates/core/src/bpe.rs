//! Byte-level byte-pair encoding.
//!
//! Ids `0..256` are raw bytes, id 256 is the reserved end-of-text token and
//! merged tokens follow in training order. There is no pre-splitting: merges
//! may span spaces, but never span corpus lines.
//!
//! Tokenizer file format (UTF-8, LF):
//!
//! ```text
//! storejourney-bpe v1
//! vocab_size 512
//! merges 255
//! 97 101
//! ...
//! ```
//!
//! Each merge line holds the left and right ids; merge `k` creates id `257 + k`.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};

pub const BYTE_TOKENS: u32 = 256;
pub const END_OF_TEXT: u32 = 256;
pub const FIRST_MERGE_ID: u32 = 257;
const HEADER: &str = "storejourney-bpe v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenizerError {
    #[error("unknown token id {0}")]
    UnknownId(u32),
    #[error("vocab_size must exceed {FIRST_MERGE_ID}, got {0}")]
    VocabTooSmall(usize),
    #[error("tokenizer file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    vocab_size: usize,
    merges: Vec<(u32, u32)>,
    /// Byte expansion of every id; end-of-text expands to nothing.
    pieces: Vec<Vec<u8>>,
    ranks: HashMap<(u32, u32), u32>,
}

impl Tokenizer {
    fn from_merges(vocab_size: usize, merges: Vec<(u32, u32)>) -> std::result::Result<Self, TokenizerError> {
        let mut pieces: Vec<Vec<u8>> = (0..BYTE_TOKENS).map(|b| vec![b as u8]).collect();
        pieces.push(Vec::new());
        let mut ranks = HashMap::with_capacity(merges.len());
        for (k, &(a, b)) in merges.iter().enumerate() {
            let known = pieces.len() as u32;
            for id in [a, b] {
                if id >= known || id == END_OF_TEXT {
                    return Err(TokenizerError::Parse { line: k + 4, msg: format!("merge uses unavailable id {id}") });
                }
            }
            let mut piece = pieces[a as usize].clone();
            piece.extend_from_slice(&pieces[b as usize]);
            pieces.push(piece);
            ranks.insert((a, b), k as u32);
        }
        Ok(Self { vocab_size, merges, pieces, ranks })
    }

    /// Target vocabulary size requested at training time.
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Ids actually in use (bytes + end-of-text + merges).
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn piece(&self, id: u32) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(Vec::as_slice)
    }

    /// Applies merges to a byte string in training order.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_bytes(text.as_bytes())
    }

    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<u32> {
        let mut ids: Vec<u32> = bytes.iter().map(|&b| b as u32).collect();
        // Repeatedly merge the lowest-ranked adjacent pair; equivalent to
        // sweeping the merge list in order over the whole sequence.
        while ids.len() >= 2 {
            let best = ids.windows(2).filter_map(|w| self.ranks.get(&(w[0], w[1])).copied()).min();
            let Some(rank) = best else { break };
            let (a, b) = self.merges[rank as usize];
            let new_id = FIRST_MERGE_ID + rank;
            let mut out = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && ids[i] == a && ids[i + 1] == b {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(ids[i]);
                    i += 1;
                }
            }
            ids = out;
        }
        ids
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> std::result::Result<Vec<u8>, TokenizerError> {
        let mut out = Vec::new();
        for &id in ids {
            let piece = self.pieces.get(id as usize).ok_or(TokenizerError::UnknownId(id))?;
            out.extend_from_slice(piece);
        }
        Ok(out)
    }

    /// Concatenated byte expansions, lossily converted to UTF-8.
    /// End-of-text contributes nothing.
    pub fn decode(&self, ids: &[u32]) -> std::result::Result<String, TokenizerError> {
        let bytes = self.decode_bytes(ids)?;
        Ok(String::from_utf8(bytes).unwrap_or_else(|e| String::from_utf8_lossy(e.as_bytes()).into_owned()))
    }

    /// Token stream for training: each line prefixed by end-of-text.
    pub fn encode_corpus<'a>(&self, lines: impl IntoIterator<Item = &'a str>) -> Vec<u32> {
        let mut out = Vec::new();
        for line in lines {
            out.push(END_OF_TEXT);
            out.extend(self.encode(line));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER}\nvocab_size {}\nmerges {}\n", self.vocab_size, self.merges.len());
        for (a, b) in &self.merges {
            s.push_str(&format!("{a} {b}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, TokenizerError> {
        let err = |line: usize, msg: &str| TokenizerError::Parse { line, msg: msg.to_string() };
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(err(1, "bad header"));
        }
        let field = |line: Option<&str>, n: usize, key: &str| -> std::result::Result<usize, TokenizerError> {
            line.and_then(|l| l.strip_prefix(key))
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| err(n, &format!("expected `{key}<n>`")))
        };
        let vocab_size = field(lines.next(), 2, "vocab_size ")?;
        let n_merges = field(lines.next(), 3, "merges ")?;
        let mut merges = Vec::with_capacity(n_merges);
        for k in 0..n_merges {
            let line = lines.next().ok_or_else(|| err(k + 4, "missing merge"))?;
            let mut it = line.split(' ').map(str::parse::<u32>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => merges.push((a, b)),
                _ => return Err(err(k + 4, "expected two ids")),
            }
        }
        if lines.any(|l| !l.is_empty()) {
            return Err(err(n_merges + 4, "trailing content"));
        }
        if FIRST_MERGE_ID as usize + merges.len() > vocab_size {
            return Err(err(3, "more merges than vocab_size allows"));
        }
        Self::from_merges(vocab_size, merges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_text(&crate::io::read_to_string(path)?)?)
    }

    /// SHA-256 of the serialized tokenizer.
    pub fn hash(&self) -> String {
        crate::io::sha256_hex(self.to_text().as_bytes())
    }
}

/// Trains a tokenizer on corpus lines.
///
/// Each round merges the most frequent adjacent pair (counted within lines,
/// non-overlapping occurrences not required), ties going to the pair whose
/// byte expansions compare smallest. Stops at `vocab_size` or when no pair
/// occurs twice.
pub fn train_bpe<'a>(lines: impl IntoIterator<Item = &'a str>, vocab_size: usize) -> Result<Tokenizer> {
    if vocab_size <= FIRST_MERGE_ID as usize {
        return Err(Error::Tokenizer(TokenizerError::VocabTooSmall(vocab_size)));
    }
    let mut seqs: Vec<Vec<u32>> =
        lines.into_iter().map(|l| l.bytes().map(u32::from).collect::<Vec<u32>>()).filter(|s| s.len() >= 2).collect();
    let mut pieces: Vec<Vec<u8>> = (0..BYTE_TOKENS).map(|b| vec![b as u8]).collect();
    pieces.push(Vec::new());
    let mut merges = Vec::new();
    let mut counts: Vec<u32> = Vec::new();

    while pieces.len() < vocab_size {
        let v = pieces.len();
        counts.clear();
        counts.resize(v * v, 0);
        for s in &seqs {
            for w in s.windows(2) {
                counts[w[0] as usize * v + w[1] as usize] += 1;
            }
        }
        let mut best: Option<(u32, usize)> = None;
        for (flat, &n) in counts.iter().enumerate() {
            if n < 2 {
                continue;
            }
            best = match best {
                None => Some((n, flat)),
                Some((bn, bf)) => {
                    let better = n > bn
                        || (n == bn && {
                            let key = |f: usize| (&pieces[f / v], &pieces[f % v]);
                            key(flat) < key(bf)
                        });
                    if better {
                        Some((n, flat))
                    } else {
                        Some((bn, bf))
                    }
                }
            };
        }
        let Some((_, flat)) = best else { break };
        let (a, b) = ((flat / v) as u32, (flat % v) as u32);
        let new_id = v as u32;
        for s in seqs.iter_mut() {
            let mut w = 0;
            let mut r = 0;
            while r < s.len() {
                if r + 1 < s.len() && s[r] == a && s[r + 1] == b {
                    s[w] = new_id;
                    r += 2;
                } else {
                    s[w] = s[r];
                    r += 1;
                }
                w += 1;
            }
            s.truncate(w);
        }
        seqs.retain(|s| s.len() >= 2);
        let mut piece = pieces[a as usize].clone();
        piece.extend_from_slice(&pieces[b as usize]);
        pieces.push(piece);
        merges.push((a, b));
    }
    Ok(Tokenizer::from_merges(vocab_size, merges)?)
}
