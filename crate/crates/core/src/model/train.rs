use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backward::{detection_example_grad, mlm_example_grad};
use super::forward::{decide, forward};
use super::{AdamW, ModelError, Parameters};
use crate::corpus::LabeledExample;
use crate::tokenizer::{BpeVocabulary, SubtokenEncoding};

/// What the detector is allowed to learn from: tokens and a binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSample {
    pub encoding: SubtokenEncoding,
    pub label: u8,
}

impl DetectionSample {
    /// Encodes examples, reading only `tokens` and `label`.
    pub fn from_examples(vocab: &BpeVocabulary, examples: &[LabeledExample]) -> Result<Vec<Self>, ModelError> {
        examples
            .iter()
            .map(|e| Ok(DetectionSample { encoding: vocab.encode(&e.tokens)?, label: e.label }))
            .collect()
    }
}

/// One masked-LM input: payload ids with `[MASK]` substituted, and the
/// original id at each masked payload position.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmSample {
    pub input_ids: Vec<u32>,
    pub targets: Vec<(usize, u32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 6, batch_size: 64, lr: 3e-4, weight_decay: 0.01, warmup_steps: 0, clip_norm: 1.0, seed: 0 }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ModelError::InvalidConfig("lr must be positive".into()));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.lr * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            self.lr
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch of the returned checkpoint; 0 means the initialization.
    pub best_epoch: usize,
    pub best_valid_accuracy: f64,
}

pub fn detection_accuracy(params: &Parameters, samples: &[DetectionSample]) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for s in samples {
        if decide(forward(params, &s.encoding)?.p) == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

fn clip(grads: &mut Parameters, max_norm: f64) {
    if max_norm > 0.0 {
        let norm = grads.squared_norm().sqrt();
        if norm > max_norm {
            grads.scale(max_norm / norm);
        }
    }
}

/// Trains the detector with AdamW and returns the checkpoint with the best
/// validation accuracy (earliest epoch on ties). Single-threaded and fully
/// determined by `cfg.seed`.
pub fn train(
    init: Parameters,
    train_set: &[DetectionSample],
    valid_set: &[DetectionSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(Parameters, TrainHistory), ModelError> {
    cfg.validate()?;
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 || train_set.is_empty() {
        return Ok((init, history));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);

    let mut params = init;
    let mut opt = AdamW::new(&params, cfg.weight_decay);
    opt.frozen = vec!["mlm.".into()];
    let mut best: Option<Parameters> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = params.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += detection_example_grad(&params, &train_set[i], Some(&mut dropout_rng), scale, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(ModelError::Diverged { epoch, step, loss: batch_loss });
            }
            clip(&mut grads, cfg.clip_norm);
            opt.step(&mut params, &grads, cfg.lr_at(step));
            step += 1;
            epoch_loss += batch_loss;
        }
        if !params.all_finite() {
            return Err(ModelError::Diverged { epoch, step, loss: f64::NAN });
        }
        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            valid_accuracy: detection_accuracy(&params, valid_set)?,
        };
        on_epoch(&stats);
        if best.is_none() || stats.valid_accuracy > history.best_valid_accuracy {
            history.best_epoch = epoch;
            history.best_valid_accuracy = stats.valid_accuracy;
            best = Some(params.clone());
        }
        history.epochs.push(stats);
    }
    Ok((best.expect("at least one epoch ran"), history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub mask_prob: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for MlmConfig {
    fn default() -> Self {
        MlmConfig { epochs: 6, batch_size: 64, lr: 1e-3, weight_decay: 0.01, mask_prob: 0.15, clip_norm: 1.0, seed: 0 }
    }
}

/// Replaces each payload position by `mask_id` with probability `mask_prob`.
pub(crate) fn mask_sequence(ids: &[u32], mask_id: u32, mask_prob: f64, rng: &mut ChaCha8Rng) -> MlmSample {
    let mut input_ids = ids.to_vec();
    let mut targets = Vec::new();
    for (pos, id) in input_ids.iter_mut().enumerate() {
        if rng.random::<f64>() < mask_prob {
            targets.push((pos, *id));
            *id = mask_id;
        }
    }
    MlmSample { input_ids, targets }
}

/// Masked-LM pretraining over clean sequences. Batches that end up with no
/// masked position are skipped, so `mask_prob = 0` leaves parameters as is.
/// Returns the trained parameters and the mean masked-token loss per epoch.
pub fn pretrain_mlm(
    init: Parameters,
    corpus: &[SubtokenEncoding],
    mask_id: u32,
    cfg: &MlmConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(Parameters, Vec<f64>), ModelError> {
    if cfg.batch_size == 0 || !(0.0..=1.0).contains(&cfg.mask_prob) {
        return Err(ModelError::InvalidConfig("batch_size must be positive and mask_prob in [0, 1]".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    mask_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);

    let mut params = init;
    let mut opt = AdamW::new(&params, cfg.weight_decay);
    opt.frozen = vec!["cls.".into()];
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let (mut total, mut count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let samples: Vec<MlmSample> = batch
                .iter()
                .map(|&i| mask_sequence(&corpus[i].ids, mask_id, cfg.mask_prob, &mut mask_rng))
                .collect();
            let masked: usize = samples.iter().map(|s| s.targets.len()).sum();
            if masked == 0 {
                continue;
            }
            let mut grads = params.zeros_like();
            let scale = 1.0 / masked as f64;
            let mut batch_loss = 0.0;
            for s in &samples {
                batch_loss += mlm_example_grad(&params, s, Some(&mut dropout_rng), scale, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(ModelError::Diverged { epoch, step, loss: batch_loss });
            }
            clip(&mut grads, cfg.clip_norm);
            opt.step(&mut params, &grads, cfg.lr);
            step += 1;
            total += batch_loss;
            count += masked;
        }
        let mean = if count == 0 { 0.0 } else { total / count as f64 };
        on_epoch(epoch, mean);
        losses.push(mean);
    }
    Ok((params, losses))
}
