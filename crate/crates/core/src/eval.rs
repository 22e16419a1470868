//! Detection and localization metrics, the random-window baseline and the
//! full evaluation report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LabeledExample;
use crate::localize::{
    localize_encoding, rank_heads, AttentionDetector, HeadMode, HeadProfile, LocalizationResult, LocalizeError,
    LocalizeOptions,
};
use crate::tokenizer::{BpeVocabulary, TokenizerError};

/// Sample cap for per-head ablation tables.
pub const ABLATION_SAMPLE_CAP: usize = 2000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{what}: {left} vs {right} entries")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error(transparent)]
    Localize(#[from] LocalizeError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision and recall are 0 when their denominator is.
pub fn detection_metrics(predictions: &[u8], labels: &[u8]) -> Result<DetectionMetrics, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch { what: "predictions and labels", left: predictions.len(), right: labels.len() });
    }
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut c = Confusion::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p == 1, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(DetectionMetrics {
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        accuracy: ratio(c.tp + c.tn, c.total()),
        confusion: c,
    })
}

/// `joint` divides hits by every buggy example; `conditional` divides by
/// the buggy examples that were also detected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationAccuracy {
    pub joint: f64,
    pub conditional: f64,
    pub buggy: usize,
    pub detected: usize,
    pub hits: usize,
}

fn check_aligned(results: &[LocalizationResult], examples: &[LabeledExample]) -> Result<(), EvalError> {
    if results.len() != examples.len() {
        return Err(EvalError::LengthMismatch { what: "results and examples", left: results.len(), right: examples.len() });
    }
    Ok(())
}

fn buggy_pairs<'a>(
    results: &'a [LocalizationResult],
    examples: &'a [LabeledExample],
) -> impl Iterator<Item = (&'a LocalizationResult, (usize, usize))> {
    results.iter().zip(examples).filter_map(|(r, e)| e.bug_span.filter(|_| e.is_buggy()).map(|s| (r, s)))
}

/// A hit needs a buggy verdict and a best window containing the whole span.
pub fn localization_accuracy(
    results: &[LocalizationResult],
    examples: &[LabeledExample],
) -> Result<LocalizationAccuracy, EvalError> {
    check_aligned(results, examples)?;
    let (mut buggy, mut detected, mut hits) = (0, 0, 0);
    for (r, span) in buggy_pairs(results, examples) {
        buggy += 1;
        if r.is_buggy() {
            detected += 1;
            if r.hits(span) {
                hits += 1;
            }
        }
    }
    Ok(LocalizationAccuracy { joint: ratio(hits, buggy), conditional: ratio(hits, detected), buggy, detected, hits })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub k: usize,
    pub accuracy: f64,
}

/// Joint hit rate when any of the first `k` windows may contain the span.
pub fn topk_accuracy(
    results: &[LocalizationResult],
    examples: &[LabeledExample],
    ks: &[usize],
) -> Result<Vec<TopK>, EvalError> {
    check_aligned(results, examples)?;
    let buggy = buggy_pairs(results, examples).count();
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = buggy_pairs(results, examples).filter(|(r, s)| r.is_buggy() && r.hits_within(*s, k)).count();
            TopK { k, accuracy: ratio(hits, buggy) }
        })
        .collect())
}

/// Expected accuracy of picking one of the `l - n + 1` windows uniformly:
/// the mean over buggy examples of (windows containing the span) / (windows).
pub fn random_baseline(examples: &[LabeledExample], n: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for e in examples {
        let Some((a, b)) = e.bug_span.filter(|_| e.is_buggy()) else { continue };
        count += 1;
        let l = e.tokens.len();
        if n == 0 || n > l {
            continue;
        }
        let windows = l - n + 1;
        let lo = (b + 1).saturating_sub(n);
        let hi = a.min(l - n);
        if hi >= lo {
            total += (hi - lo + 1) as f64 / windows as f64;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Per-head single-head localization accuracy over up to
/// [`ABLATION_SAMPLE_CAP`] correctly detected buggy examples.
pub fn head_ablation_report<D: AttentionDetector + ?Sized>(
    detector: &D,
    vocab: &BpeVocabulary,
    examples: &[LabeledExample],
    window: usize,
    seed: u64,
) -> Result<HeadProfile, EvalError> {
    Ok(rank_heads(detector, vocab, examples, window, ABLATION_SAMPLE_CAP, seed)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub window: usize,
    /// Must already be resolved (no `top:k`).
    pub head_mode: HeadMode,
    pub ks: Vec<usize>,
    pub seed: u64,
    pub head_table: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { window: 1, head_mode: HeadMode::Average, ks: vec![1, 3, 5, 10], seed: 0, head_table: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub examples: usize,
    pub detection: DetectionMetrics,
    pub localization: LocalizationAccuracy,
    pub topk: Vec<TopK>,
    /// Joint accuracy when every ranked window counts.
    pub top_all: f64,
    pub random_baseline: f64,
    pub heads: Option<HeadProfile>,
    pub config: EvalOptions,
}

/// Localizes every example once with all windows ranked, then derives
/// every metric from those results.
pub fn evaluate<D: AttentionDetector + ?Sized>(
    detector: &D,
    vocab: &BpeVocabulary,
    examples: &[LabeledExample],
    options: &EvalOptions,
) -> Result<(EvalReport, Vec<LocalizationResult>), EvalError> {
    if examples.is_empty() {
        return Err(EvalError::Empty);
    }
    let loc = LocalizeOptions { window: options.window, head_mode: options.head_mode.clone(), top_k: usize::MAX };
    let results = examples
        .iter()
        .map(|e| localize_encoding(detector, &vocab.encode(&e.tokens)?, Some(&e.lines), &loc))
        .collect::<Result<Vec<_>, LocalizeError>>()?;
    let predictions: Vec<u8> = results.iter().map(|r| u8::from(r.is_buggy())).collect();
    let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
    let heads = if options.head_table {
        match head_ablation_report(detector, vocab, examples, options.window, options.seed) {
            Ok(p) => Some(p),
            Err(EvalError::Localize(LocalizeError::NoBuggyExamples)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let report = EvalReport {
        examples: examples.len(),
        detection: detection_metrics(&predictions, &labels)?,
        localization: localization_accuracy(&results, examples)?,
        topk: topk_accuracy(&results, examples, &options.ks)?,
        top_all: topk_accuracy(&results, examples, &[usize::MAX])?[0].accuracy,
        random_baseline: random_baseline(examples, options.window),
        heads,
        config: options.clone(),
    };
    Ok((report, results))
}

impl EvalReport {
    /// Plain-text rendering for terminals.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let d = &self.detection;
        let l = &self.localization;
        let _ = writeln!(s, "examples        {}", self.examples);
        let _ = writeln!(s, "head mode       {}   window {}", self.config.head_mode, self.config.window);
        let _ = writeln!(s, "detection       acc {:.4}  precision {:.4}  recall {:.4}", d.accuracy, d.precision, d.recall);
        let c = &d.confusion;
        let _ = writeln!(s, "confusion       tp {}  fp {}  fn {}  tn {}", c.tp, c.fp, c.fn_, c.tn);
        let _ = writeln!(
            s,
            "localization    joint {:.4}  conditional {:.4}  ({} hits / {} detected / {} buggy)",
            l.joint, l.conditional, l.hits, l.detected, l.buggy
        );
        for t in &self.topk {
            let _ = writeln!(s, "top-{:<11} {:.4}", t.k, t.accuracy);
        }
        let _ = writeln!(s, "top-all         {:.4}", self.top_all);
        let _ = writeln!(s, "random window   {:.4}", self.random_baseline);
        if let Some(h) = &self.heads {
            let _ = writeln!(s, "per-head accuracy over {} detected buggy examples:", h.sample_size);
            for &i in &h.ranking {
                let _ = writeln!(s, "  head {:<3} {:.4}", i, h.accuracies[i]);
            }
        }
        s
    }
}
