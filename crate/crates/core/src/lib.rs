//! Weakly supervised bug localization.
//!
//! A small transformer is trained to classify mini-language functions as
//! buggy or clean using nothing but binary labels. Its last-layer `[CLS]`
//! attention is then aggregated over heads and subtokens into per-token
//! importance scores, and the highest-scoring window is reported as the bug.

pub mod corpus;
pub mod eval;
pub mod fix;
pub mod localize;
pub mod model;
pub mod tokenizer;
