//! Attention-based bug localization.
//!
//! A detector that calls an input buggy exposes its last-layer `[CLS]`
//! attention. Heads are averaged (all of them, or a chosen subset), the
//! per-subtoken mass is summed back onto source tokens, and the window of
//! `N` tokens with the largest mass is the predicted bug location.

mod aggregate;
mod heads;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{forward, ModelError, Parameters};
use crate::tokenizer::{BpeVocabulary, SubtokenEncoding, TokenizerError};

pub use aggregate::{agg_head_average, agg_head_subset, agg_subtoken, line_scores, locate, rank_lines, top_k_windows, Window};
pub use heads::{rank_heads, select_top_k_heads, HeadProfile, DEFAULT_SAMPLE_CAP};

#[derive(Debug, Error)]
pub enum LocalizeError {
    #[error("head set is empty")]
    EmptyHeadSet,
    #[error("head {head} out of range for {heads} heads")]
    HeadOutOfRange { head: usize, heads: usize },
    #[error("window of {window} tokens exceeds input of {len} tokens")]
    WindowTooLarge { window: usize, len: usize },
    #[error("window size must be at least 1")]
    ZeroWindow,
    #[error("K must be at least 1")]
    InvalidK,
    #[error("k = {k} must lie in 1..={heads}")]
    HeadCountOutOfRange { k: usize, heads: usize },
    #[error("alignment: {0}")]
    Alignment(String),
    #[error("no correctly detected buggy examples with spans to profile")]
    NoBuggyExamples,
    #[error("head mode {0} needs a head profile")]
    UnresolvedHeadMode(HeadMode),
    #[error("invalid head mode {0:?}; expected average, single:I, subset:I,J,.. or top:K")]
    BadHeadMode(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

/// What a localizer needs from a detector: its class distribution and each
/// last-layer head's `[CLS]` attention over payload subtokens.
pub trait AttentionDetector {
    fn head_count(&self) -> usize;
    fn attend(&self, encoding: &SubtokenEncoding) -> Result<Attended, LocalizeError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attended {
    pub p: [f64; 2],
    /// One row per head, each summing to one over payload positions.
    pub rows: Vec<Vec<f64>>,
}

impl Attended {
    pub fn is_buggy(&self) -> bool {
        self.p[1] >= 0.5
    }
}

impl AttentionDetector for Parameters {
    fn head_count(&self) -> usize {
        self.config.heads
    }

    fn attend(&self, encoding: &SubtokenEncoding) -> Result<Attended, LocalizeError> {
        let trace = forward(self, encoding)?;
        Ok(Attended { p: trace.p, rows: trace.attention.cls_payload_rows() })
    }
}

/// Which heads feed the importance vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeadMode {
    Average,
    Subset(Vec<usize>),
    Single(usize),
    /// The `k` best heads of a profile; resolve before localizing.
    Top(usize),
}

impl HeadMode {
    /// Replaces `Top(k)` by the profile's `k` best heads.
    pub fn resolve(&self, profile: Option<&HeadProfile>) -> Result<HeadMode, LocalizeError> {
        match (self, profile) {
            (HeadMode::Top(k), Some(p)) => Ok(HeadMode::Subset(select_top_k_heads(p, *k)?)),
            (HeadMode::Top(_), None) => Err(LocalizeError::UnresolvedHeadMode(self.clone())),
            _ => Ok(self.clone()),
        }
    }

    fn aggregate(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, LocalizeError> {
        match self {
            HeadMode::Average => Ok(agg_head_average(rows)),
            HeadMode::Subset(ids) => agg_head_subset(rows, ids),
            HeadMode::Single(i) => agg_head_subset(rows, &[*i]),
            HeadMode::Top(_) => Err(LocalizeError::UnresolvedHeadMode(self.clone())),
        }
    }
}

impl fmt::Display for HeadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadMode::Average => write!(f, "average"),
            HeadMode::Single(i) => write!(f, "single:{i}"),
            HeadMode::Top(k) => write!(f, "top:{k}"),
            HeadMode::Subset(ids) => {
                let ids: Vec<String> = ids.iter().map(usize::to_string).collect();
                write!(f, "subset:{}", ids.join(","))
            }
        }
    }
}

impl FromStr for HeadMode {
    type Err = LocalizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || LocalizeError::BadHeadMode(s.to_string());
        if s == "average" {
            return Ok(HeadMode::Average);
        }
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "single" => arg.parse().map(HeadMode::Single).map_err(|_| bad()),
            "top" => arg.parse().map(HeadMode::Top).map_err(|_| bad()),
            "subset" => arg
                .split(',')
                .map(|x| x.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map(HeadMode::Subset)
                .map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

impl Serialize for HeadMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HeadMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalizeOptions {
    /// Window size `N` in tokens.
    pub window: usize,
    pub head_mode: HeadMode,
    /// Number of ranked windows to report.
    pub top_k: usize,
}

impl Default for LocalizeOptions {
    fn default() -> Self {
        LocalizeOptions { window: 1, head_mode: HeadMode::Average, top_k: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Clean,
    Buggy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRef {
    pub start: usize,
    pub len: usize,
}

/// A clean verdict carries no window, no ranked windows and no scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub verdict: Verdict,
    pub p: [f64; 2],
    pub window: Option<WindowRef>,
    pub topk: Vec<Window>,
    pub token_scores: Vec<f64>,
    pub line_scores: Option<Vec<f64>>,
}

impl LocalizationResult {
    pub fn is_buggy(&self) -> bool {
        self.verdict == Verdict::Buggy
    }

    /// Whether the best window contains the whole span.
    pub fn hits(&self, span: (usize, usize)) -> bool {
        self.topk.first().is_some_and(|w| w.contains(span))
    }

    /// Whether any of the first `k` windows contains the whole span.
    pub fn hits_within(&self, span: (usize, usize), k: usize) -> bool {
        self.topk.iter().take(k).any(|w| w.contains(span))
    }
}

/// Token importance `v` from per-head `[CLS]` rows.
pub fn importance(rows: &[Vec<f64>], spans: &[(usize, usize)], head_mode: &HeadMode) -> Result<Vec<f64>, LocalizeError> {
    agg_subtoken(&head_mode.aggregate(rows)?, spans)
}

/// Localization over an already-encoded input.
pub fn localize_encoding<D: AttentionDetector + ?Sized>(
    detector: &D,
    encoding: &SubtokenEncoding,
    line_map: Option<&[usize]>,
    options: &LocalizeOptions,
) -> Result<LocalizationResult, LocalizeError> {
    let attended = detector.attend(encoding)?;
    if !attended.is_buggy() {
        return Ok(LocalizationResult {
            verdict: Verdict::Clean,
            p: attended.p,
            window: None,
            topk: Vec::new(),
            token_scores: Vec::new(),
            line_scores: None,
        });
    }
    let v = importance(&attended.rows, &encoding.spans, &options.head_mode)?;
    let topk = top_k_windows(&v, options.window, options.top_k)?;
    let line_scores = line_map.map(|m| line_scores(&v, m)).transpose()?;
    Ok(LocalizationResult {
        verdict: Verdict::Buggy,
        p: attended.p,
        window: topk.first().map(|w| WindowRef { start: w.start, len: w.len }),
        topk,
        token_scores: v,
        line_scores,
    })
}

/// Detects, and for a buggy verdict ranks windows of `options.window` tokens.
pub fn localize<D: AttentionDetector + ?Sized, S: AsRef<str>>(
    detector: &D,
    vocab: &BpeVocabulary,
    tokens: &[S],
    line_map: Option<&[usize]>,
    options: &LocalizeOptions,
) -> Result<LocalizationResult, LocalizeError> {
    localize_encoding(detector, &vocab.encode(tokens)?, line_map, options)
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// Detector with fixed output, for exercising localization logic.
    pub struct FixedDetector {
        pub p1: f64,
        pub rows: Vec<Vec<f64>>,
    }

    impl AttentionDetector for FixedDetector {
        fn head_count(&self) -> usize {
            self.rows.len()
        }

        fn attend(&self, encoding: &SubtokenEncoding) -> Result<Attended, LocalizeError> {
            assert_eq!(encoding.ids.len(), self.rows[0].len());
            Ok(Attended { p: [1.0 - self.p1, self.p1], rows: self.rows.clone() })
        }
    }

    pub fn one_to_one(n: usize) -> SubtokenEncoding {
        SubtokenEncoding { ids: vec![4; n], spans: (0..n).map(|i| (i, i)).collect() }
    }
}
