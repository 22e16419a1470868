//! Synthetic bug-detection corpora: a mini-language generator, three
//! single-token mutators and balanced dataset splits.

mod dataset;
mod generator;
mod mutate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{build_dataset, read_jsonl, write_jsonl, BugMix, DatasetConfig, DatasetSplits, SplitCounts};
pub use generator::{
    generate_function, identifier_pool, is_identifier, MiniFunction, SizeConfig, VarUse, ARITH_OPS,
    BOUND_NAMES, EQUALITY_CMP, INDEX_NAMES, MISC_NAMES, ORDERED_CMP, VALUE_NAMES,
};
pub use mutate::{inject, inject_biop_misuse, inject_bound_error, inject_var_misuse};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no mutation site for bug kind `{0}`")]
    NoMutationSite(BugKind),
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
    #[error("inconsistent example `{id}`: {message}")]
    Inconsistent { id: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BugKind {
    None,
    Bound,
    Biop,
    #[serde(rename = "varmisuse")]
    VarMisuse,
}

impl BugKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BugKind::None => "none",
            BugKind::Bound => "bound",
            BugKind::Biop => "biop",
            BugKind::VarMisuse => "varmisuse",
        }
    }
}

impl fmt::Display for BugKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BugKind {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(BugKind::None),
            "bound" => Ok(BugKind::Bound),
            "biop" => Ok(BugKind::Biop),
            "varmisuse" => Ok(BugKind::VarMisuse),
            other => Err(CorpusError::InvalidConfig(format!("unknown bug kind `{other}`"))),
        }
    }
}

/// One detection example. `bug_span` is evaluation metadata: training only
/// ever sees `tokens` and `label`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: u8,
    pub bug_kind: BugKind,
    pub bug_span: Option<(usize, usize)>,
    pub origin_id: String,
    pub lines: Vec<usize>,
}

impl LabeledExample {
    pub fn clean(f: &MiniFunction) -> Self {
        LabeledExample {
            id: f.id.clone(),
            tokens: f.tokens.clone(),
            label: 0,
            bug_kind: BugKind::None,
            bug_span: None,
            origin_id: f.id.clone(),
            lines: f.line_map.clone(),
        }
    }

    pub fn is_buggy(&self) -> bool {
        self.label == 1
    }

    /// Checks label/kind/span consistency. A buggy example with its span
    /// stripped is still accepted, since training data may omit spans.
    pub fn check(&self) -> Result<(), CorpusError> {
        let fail = |message: &str| {
            Err(CorpusError::Inconsistent { id: self.id.clone(), message: message.to_string() })
        };
        if self.label > 1 {
            return fail("label must be 0 or 1");
        }
        if self.tokens.is_empty() {
            return fail("empty token list");
        }
        if self.lines.len() != self.tokens.len() {
            return fail("line map length differs from token count");
        }
        if (self.label == 1) != (self.bug_kind != BugKind::None) {
            return fail("label disagrees with bug_kind");
        }
        if let Some((s, e)) = self.bug_span {
            if self.label == 0 {
                return fail("clean example carries a bug span");
            }
            if s > e || e >= self.tokens.len() {
                return fail("bug span out of range");
            }
        }
        Ok(())
    }
}
