use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{agg_subtoken, locate, AttentionDetector, LocalizeError};
use crate::corpus::LabeledExample;
use crate::tokenizer::BpeVocabulary;

pub const DEFAULT_SAMPLE_CAP: usize = 1000;

/// Single-head localization accuracy of every head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadProfile {
    pub accuracies: Vec<f64>,
    /// Head ids by descending accuracy, lower id on ties.
    pub ranking: Vec<usize>,
    pub window: usize,
    pub sample_size: usize,
    pub sample_cap: usize,
    pub seed: u64,
}

/// Profiles each head on up to `sample_cap` correctly detected buggy
/// examples, drawn by `seed`. This is the only consumer of `bug_span`
/// outside evaluation.
pub fn rank_heads<D: AttentionDetector + ?Sized>(
    detector: &D,
    vocab: &BpeVocabulary,
    examples: &[LabeledExample],
    window: usize,
    sample_cap: usize,
    seed: u64,
) -> Result<HeadProfile, LocalizeError> {
    let mut detected = Vec::new();
    for e in examples {
        let Some(span) = e.bug_span.filter(|_| e.is_buggy()) else { continue };
        let enc = vocab.encode(&e.tokens)?;
        let att = detector.attend(&enc)?;
        if att.is_buggy() {
            detected.push((span, enc.spans, att.rows));
        }
    }
    if detected.is_empty() {
        return Err(LocalizeError::NoBuggyExamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    detected.shuffle(&mut rng);
    detected.truncate(sample_cap.max(1));

    let heads = detector.head_count();
    let mut hits = vec![0usize; heads];
    for (span, spans, rows) in &detected {
        for (h, row) in rows.iter().enumerate() {
            let k = locate(&agg_subtoken(row, spans)?, window)?;
            if k <= span.0 && span.1 < k + window {
                hits[h] += 1;
            }
        }
    }
    let n = detected.len();
    let accuracies: Vec<f64> = hits.iter().map(|&c| c as f64 / n as f64).collect();
    let mut ranking: Vec<usize> = (0..heads).collect();
    ranking.sort_by(|&a, &b| accuracies[b].total_cmp(&accuracies[a]).then(a.cmp(&b)));
    Ok(HeadProfile { accuracies, ranking, window, sample_size: n, sample_cap, seed })
}

/// The `k` best heads of a profile, as ascending ids.
pub fn select_top_k_heads(profile: &HeadProfile, k: usize) -> Result<Vec<usize>, LocalizeError> {
    let heads = profile.ranking.len();
    if k == 0 || k > heads {
        return Err(LocalizeError::HeadCountOutOfRange { k, heads });
    }
    let mut ids = profile.ranking[..k].to_vec();
    ids.sort_unstable();
    Ok(ids)
}
