use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::attention::{multi_head_cached, AttentionCache, AttentionTensor};
use super::ops::{affine, gelu, layer_norm, softmax_in_place, LayerNormCache};
use super::{ModelError, Parameters};
use crate::tokenizer::SubtokenEncoding;

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Result of one inference pass: last-layer hidden states and attention,
/// and the class distribution `p = (p_clean, p_buggy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub hidden: Array2<f64>,
    pub attention: AttentionTensor,
    pub p: [f64; 2],
}

pub(crate) struct LayerCache {
    pub x_in: Array2<f64>,
    pub attn: AttentionCache,
    pub drop_attn: Option<Array2<f64>>,
    pub ln1: LayerNormCache,
    pub y: Array2<f64>,
    pub ff_pre: Array2<f64>,
    pub ff_act: Array2<f64>,
    pub drop_ff: Option<Array2<f64>>,
    pub ln2: LayerNormCache,
}

pub(crate) struct EncoderCache {
    pub ids: Vec<u32>,
    pub emb_ln: LayerNormCache,
    pub drop_emb: Option<Array2<f64>>,
    pub layers: Vec<LayerCache>,
    pub hidden: Array2<f64>,
}

fn dropout_mask(rng: &mut ChaCha8Rng, shape: (usize, usize), rate: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < rate { 0.0 } else { keep })
}

fn check_ids(params: &Parameters, ids: &[u32]) -> Result<(), ModelError> {
    let cfg = &params.config;
    if ids.len() > cfg.max_len {
        return Err(ModelError::SequenceTooLong { len: ids.len(), max_len: cfg.max_len });
    }
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(ModelError::IdOutOfRange(bad));
    }
    Ok(())
}

/// Runs the encoder over `ids` (which already start with `[CLS]`), keeping
/// every intermediate the backward pass needs. Dropout is active only when
/// an RNG is supplied.
pub(crate) fn encode_cached(
    params: &Parameters,
    ids: &[u32],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<EncoderCache, ModelError> {
    check_ids(params, ids)?;
    let cfg = &params.config;
    let n = ids.len();
    let d = cfg.dim;
    let rate = cfg.dropout;

    let mut emb = Array2::zeros((n, d));
    for (t, &id) in ids.iter().enumerate() {
        let mut row = emb.row_mut(t);
        row.assign(&params.tok_emb.row(id as usize));
        row += &params.pos_emb.row(t);
    }
    let (mut x, emb_ln) = layer_norm(&emb, params.emb_ln_gain.view(), params.emb_ln_bias.view());
    let mut draw = |shape: (usize, usize)| match rng.as_deref_mut() {
        Some(r) if rate > 0.0 => Some(dropout_mask(r, shape, rate)),
        _ => None,
    };
    let drop_emb = draw((n, d));
    if let Some(m) = &drop_emb {
        x *= m;
    }

    let mut layers = Vec::with_capacity(cfg.layers);
    for layer in &params.layers {
        let (mut att, attn) = multi_head_cached(&x, layer, cfg.heads);
        let drop_attn = draw((n, d));
        if let Some(m) = &drop_attn {
            att *= m;
        }
        let (y, ln1) = layer_norm(&(&x + &att), layer.ln1_gain.view(), layer.ln1_bias.view());
        let ff_pre = affine(&y.view(), &layer.ff_w1, &layer.ff_b1);
        let ff_act = ff_pre.mapv(gelu);
        let mut ff_out = affine(&ff_act.view(), &layer.ff_w2, &layer.ff_b2);
        let drop_ff = draw((n, d));
        if let Some(m) = &drop_ff {
            ff_out *= m;
        }
        let (z, ln2) = layer_norm(&(&y + &ff_out), layer.ln2_gain.view(), layer.ln2_bias.view());
        let x_in = std::mem::replace(&mut x, z);
        layers.push(LayerCache { x_in, attn, drop_attn, ln1, y, ff_pre, ff_act, drop_ff, ln2 });
    }
    Ok(EncoderCache { ids: ids.to_vec(), emb_ln, drop_emb, layers, hidden: x })
}

pub(crate) fn class_logits(params: &Parameters, hidden: &Array2<f64>) -> Array1<f64> {
    hidden.row(0).dot(&params.cls_w) + &params.cls_b
}

pub(crate) fn class_probs(params: &Parameters, hidden: &Array2<f64>) -> [f64; 2] {
    let mut p = class_logits(params, hidden).to_vec();
    softmax_in_place(&mut p);
    [p[0], p[1]]
}

pub(crate) fn with_cls(params: &Parameters, payload: &[u32]) -> Vec<u32> {
    std::iter::once(params.config.cls_id).chain(payload.iter().copied()).collect()
}

/// Inference over raw payload ids (no `[CLS]`); `[MASK]` ids are allowed.
pub fn forward_ids(params: &Parameters, payload: &[u32]) -> Result<ForwardTrace, ModelError> {
    let cache = encode_cached(params, &with_cls(params, payload), None)?;
    let p = class_probs(params, &cache.hidden);
    let mut layers = cache.layers;
    let last = layers.pop().expect("at least one layer");
    Ok(ForwardTrace { hidden: cache.hidden, attention: AttentionTensor { heads: last.attn.alpha }, p })
}

/// Inference pass with dropout off. `[CLS]` is prepended here.
pub fn forward(params: &Parameters, encoding: &SubtokenEncoding) -> Result<ForwardTrace, ModelError> {
    forward_ids(params, &encoding.ids)
}

/// Predicted label (1 = buggy iff `p_buggy >= 0.5`) and the distribution.
pub fn detect(params: &Parameters, encoding: &SubtokenEncoding) -> Result<(u8, [f64; 2]), ModelError> {
    let p = forward(params, encoding)?.p;
    Ok((decide(p), p))
}

pub(crate) fn decide(p: [f64; 2]) -> u8 {
    u8::from(p[1] >= 0.5)
}

/// Cross-entropy `-y ln p_1 - (1-y) ln p_0` with probabilities floored at [`PROB_FLOOR`].
pub fn loss_detection(p: [f64; 2], y: u8) -> f64 {
    let q = if y == 1 { p[1] } else { p[0] };
    -q.max(PROB_FLOOR).ln()
}

/// Softmax over the vocabulary at payload position `pos` of a trace.
pub fn mlm_distribution(params: &Parameters, trace: &ForwardTrace, pos: usize) -> Vec<f64> {
    let h = trace.hidden.row(pos + 1);
    let mut logits = (h.dot(&params.mlm_w) + &params.mlm_b).to_vec();
    softmax_in_place(&mut logits);
    logits
}

pub(crate) fn mlm_logits(params: &Parameters, hidden: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let h = hidden.select(Axis(0), rows);
    h.dot(&params.mlm_w) + &params.mlm_b
}
