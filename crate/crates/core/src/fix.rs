//! Single-token repair: mask the located span and rank replacement tokens
//! by the masked-language-model head.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::localize::{localize_encoding, AttentionDetector, LocalizationResult, LocalizeError, LocalizeOptions, Verdict, WindowRef};
use crate::model::{forward_ids, mlm_distribution, ModelError, Parameters};
use crate::tokenizer::{BpeVocabulary, TokenizerError};

#[derive(Debug, Error)]
pub enum FixError {
    #[error("span ({start}, {end}) is outside {len} tokens")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("at least one candidate must be requested")]
    NoCandidates,
    #[error(transparent)]
    Localize(#[from] LocalizeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixCandidate {
    pub token: String,
    #[serde(rename = "p")]
    pub probability: f64,
    /// 1-based.
    #[serde(skip)]
    pub rank: usize,
}

/// Replaces the subtokens of tokens `span.0..=span.1` by one `[MASK]` and
/// returns the `m` likeliest whole-token subtokens. Probabilities are the
/// MLM softmax renormalized over non-special entries.
pub fn fix_span<S: AsRef<str>>(
    params: &Parameters,
    vocab: &BpeVocabulary,
    tokens: &[S],
    span: (usize, usize),
    m: usize,
) -> Result<Vec<FixCandidate>, FixError> {
    if m == 0 {
        return Err(FixError::NoCandidates);
    }
    if span.0 > span.1 || span.1 >= tokens.len() {
        return Err(FixError::SpanOutOfBounds { start: span.0, end: span.1, len: tokens.len() });
    }
    let enc = vocab.encode(tokens)?;
    let first = enc.spans[span.0].0;
    let last = enc.spans[span.1].1;
    let mut ids = Vec::with_capacity(enc.ids.len());
    ids.extend_from_slice(&enc.ids[..first]);
    ids.push(vocab.specials().mask);
    ids.extend_from_slice(&enc.ids[last + 1..]);

    let trace = forward_ids(params, &ids)?;
    let dist = mlm_distribution(params, &trace, first);
    let non_special: f64 = dist.iter().enumerate().filter(|(i, _)| !vocab.is_special(*i as u32)).map(|(_, p)| p).sum();
    let mut ranked: Vec<(u32, f64)> = dist
        .iter()
        .enumerate()
        .map(|(i, &p)| (i as u32, p / non_special))
        .filter(|&(id, _)| !vocab.is_special(id) && vocab.begins_token(id))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .take(m)
        .enumerate()
        .map(|(r, (id, p))| {
            let token = vocab.decode(&[id])?.pop().unwrap_or_default();
            Ok(FixCandidate { token, probability: p, rank: r + 1 })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixReport {
    pub verdict: Verdict,
    pub window: Option<WindowRef>,
    pub candidates: Option<Vec<FixCandidate>>,
}

/// Detect, localize, then repair the best window. A clean verdict yields
/// no candidates.
pub fn fix_pipeline<S: AsRef<str>>(
    params: &Parameters,
    vocab: &BpeVocabulary,
    tokens: &[S],
    options: &LocalizeOptions,
    m: usize,
) -> Result<(LocalizationResult, Option<Vec<FixCandidate>>), FixError> {
    let result = localize_encoding(params as &dyn AttentionDetector, &vocab.encode(tokens)?, None, options)?;
    let candidates = match result.window {
        Some(w) => Some(fix_span(params, vocab, tokens, (w.start, w.start + w.len - 1), m)?),
        None => None,
    };
    Ok((result, candidates))
}

impl FixReport {
    pub fn new(result: &LocalizationResult, candidates: Option<Vec<FixCandidate>>) -> Self {
        FixReport { verdict: result.verdict, window: result.window, candidates }
    }
}
