//! Transformer-encoder bug detector with hand-written reverse-mode gradients.
//!
//! Post-norm encoder layers (multi-head self-attention and a GELU
//! feed-forward block, each wrapped in residual + layer norm), a `[CLS]`
//! classifier head, and a masked-language-model head for the fixer.
//! Everything runs in `f64`.

mod attention;
mod backward;
mod checkpoint;
mod forward;
mod gradcheck;
mod ops;
mod optim;
mod params;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use attention::{multi_head, scaled_self_attention, AttentionTensor};
pub use backward::{backward, backward_mlm, Gradients};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use forward::{detect, forward, forward_ids, loss_detection, mlm_distribution, ForwardTrace, PROB_FLOOR};
pub use gradcheck::{compare_gradients, grad_check, GradCheckReport, Objective};
pub use optim::AdamW;
pub use params::{LayerParams, Parameters};
pub use train::{
    detection_accuracy, pretrain_mlm, train, DetectionSample, EpochStats, MlmConfig, MlmSample, TrainConfig,
    TrainHistory,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of {len} positions exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("id {0} is outside the model vocabulary")]
    IdOutOfRange(u32),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tokenizer(#[from] crate::tokenizer::TokenizerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub cls_id: u32,
}

impl ModelConfig {
    /// Desk-scale defaults: 2 layers, 4 heads, width 64.
    pub fn new(vocab_size: usize, cls_id: u32) -> Self {
        ModelConfig { layers: 2, heads: 4, dim: 64, ff_dim: 128, max_len: 192, vocab_size, dropout: 0.1, cls_id }
    }

    pub fn for_vocab(vocab: &crate::tokenizer::BpeVocabulary) -> Self {
        Self::new(vocab.len(), vocab.specials().cls)
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.layers == 0 {
            return bad("at least one layer is required");
        }
        if self.heads == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad("dim must be a positive multiple of heads");
        }
        if self.ff_dim == 0 {
            return bad("ff_dim must be positive");
        }
        if self.max_len < 2 {
            return bad("max_len must leave room for [CLS] and one subtoken");
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive");
        }
        if self.cls_id as usize >= self.vocab_size {
            return bad("cls_id lies outside the vocabulary");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}
