//! Journey text: one line per journey.
//!
//! Each token is a six-letter cell code, optionally followed by the number of
//! items put in the basket at that sample. Tokens are separated by single
//! spaces and the line ends with a standalone `.`:
//!
//! ```text
//! aeimqu aeimqu afimqv2 afimqv .
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CellCode, CodeParseError, Codec, LEVELS};
use crate::error::{Error, Result};
use crate::purchase::{merge_events, AnnotatedTrajectory, PurchaseEvent};

pub const TERMINATOR: &str = ".";

/// Cell codes in time order plus the purchase counts attached to them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Journey {
    pub codes: Vec<CellCode>,
    /// Sorted by index, at most one event per index, counts ≥ 1.
    pub events: Vec<PurchaseEvent>,
}

impl Journey {
    pub fn new(codes: Vec<CellCode>, events: Vec<PurchaseEvent>) -> Self {
        Self { codes, events: merge_events(events) }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn total_purchases(&self) -> u64 {
        self.events.iter().map(|e| e.count as u64).sum()
    }

    /// Per-sample counts, zero where nothing was bought.
    pub fn counts(&self) -> Vec<u32> {
        let mut out = vec![0; self.codes.len()];
        for e in &self.events {
            out[e.point_index] += e.count;
        }
        out
    }

    pub fn from_annotated(a: &AnnotatedTrajectory, codec: &Codec) -> Result<Self> {
        let codes =
            a.trajectory.points.iter().map(|p| codec.encode(p.pos())).collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self::new(codes, a.localization.events.clone()))
    }

    /// First `k` samples with their purchases.
    pub fn prefix(&self, k: usize) -> Journey {
        let k = k.min(self.codes.len());
        Journey {
            codes: self.codes[..k].to_vec(),
            events: self.events.iter().copied().filter(|e| e.point_index < k).collect(),
        }
    }
}

/// Tokens without the terminator: `code[count]` joined by spaces.
pub fn journey_body(j: &Journey) -> String {
    let counts = j.counts();
    let mut out = String::with_capacity(j.codes.len() * (LEVELS + 2));
    for (i, code) in j.codes.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(code.as_str());
        if counts[i] > 0 {
            write!(out, "{}", counts[i]).expect("write to string");
        }
    }
    out
}

pub fn journey_to_text(j: &Journey) -> String {
    let mut body = journey_body(j);
    if !body.is_empty() {
        body.push(' ');
    }
    body.push_str(TERMINATOR);
    body
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JourneyParseError {
    #[error("token {token}: {source}")]
    BadCode {
        token: usize,
        #[source]
        source: CodeParseError,
    },
    #[error("token {token}: digits without a preceding cell code")]
    DanglingDigits { token: usize },
    #[error("token {token}: purchase count must be a positive integer")]
    BadCount { token: usize },
    #[error("token {token}: missing terminator")]
    MissingTerminator { token: usize },
    #[error("token {token}: text after the terminator")]
    TrailingText { token: usize },
    #[error("journey has no locations")]
    Empty,
}

impl JourneyParseError {
    pub fn token(&self) -> Option<usize> {
        match self {
            Self::BadCode { token, .. }
            | Self::DanglingDigits { token }
            | Self::BadCount { token }
            | Self::MissingTerminator { token }
            | Self::TrailingText { token } => Some(*token),
            Self::Empty => None,
        }
    }
}

/// Parses one journey line. Digit runs after a code are read greedily.
pub fn parse_journey_text(text: &str) -> std::result::Result<Journey, JourneyParseError> {
    let tokens: Vec<&str> = text.split_ascii_whitespace().collect();
    let mut codes = Vec::new();
    let mut events = Vec::new();
    for (idx, tok) in tokens.iter().enumerate() {
        if *tok == TERMINATOR {
            if idx + 1 != tokens.len() {
                return Err(JourneyParseError::TrailingText { token: idx + 1 });
            }
            if codes.is_empty() {
                return Err(JourneyParseError::Empty);
            }
            return Ok(Journey { codes, events });
        }
        let bytes = tok.as_bytes();
        if bytes[0].is_ascii_digit() {
            return Err(JourneyParseError::DanglingDigits { token: idx });
        }
        let letters = bytes.iter().take_while(|b| b.is_ascii_alphabetic()).count();
        let code = CellCode::from_bytes(&bytes[..letters])
            .map_err(|source| JourneyParseError::BadCode { token: idx, source })?;
        let rest = &tok[letters..];
        if !rest.is_empty() {
            if !rest.bytes().all(|b| b.is_ascii_digit()) {
                return Err(JourneyParseError::BadCount { token: idx });
            }
            let count: u32 = rest.parse().map_err(|_| JourneyParseError::BadCount { token: idx })?;
            if count == 0 {
                return Err(JourneyParseError::BadCount { token: idx });
            }
            events.push(PurchaseEvent { point_index: codes.len(), count });
        }
        codes.push(code);
    }
    Err(JourneyParseError::MissingTerminator { token: tokens.len() })
}

/// Corpus text: one journey line per journey, LF-terminated.
pub fn corpus_text(journeys: &[Journey]) -> String {
    let mut out = String::new();
    for j in journeys {
        out.push_str(&journey_to_text(j));
        out.push('\n');
    }
    out
}

pub fn build_corpus(journeys: &[Journey], path: &Path) -> Result<()> {
    crate::io::write_atomic(path, corpus_text(journeys).as_bytes())
}

pub fn read_corpus(path: &Path) -> Result<Vec<Journey>> {
    let text = crate::io::read_to_string(path)?;
    parse_corpus(&text)
}

pub fn parse_corpus(text: &str) -> Result<Vec<Journey>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| parse_journey_text(l).map_err(|e| Error::Format(format!("corpus line {}: {e}", n + 1))))
        .collect()
}
