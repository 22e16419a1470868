use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::attention::multi_head_backward;
use super::forward::{class_probs, encode_cached, mlm_logits, with_cls, EncoderCache, PROB_FLOOR};
use super::ops::{gelu_grad, layer_norm_backward, softmax_in_place};
use super::train::{DetectionSample, MlmSample};
use super::{ModelError, Parameters};

/// Gradients share the parameter layout.
pub type Gradients = Parameters;

/// Backpropagates `d_hidden` (gradient w.r.t. the final hidden states)
/// through the encoder, accumulating into `grads`.
pub(crate) fn backward_encoder(params: &Parameters, cache: &EncoderCache, d_hidden: Array2<f64>, grads: &mut Parameters) {
    let mut dz = d_hidden;
    for (li, lc) in cache.layers.iter().enumerate().rev() {
        let layer = &params.layers[li];
        let g = &mut grads.layers[li];

        let d_sum2 = layer_norm_backward(&dz, &lc.ln2, layer.ln2_gain.view(), &mut g.ln2_gain, &mut g.ln2_bias);
        let mut d_ff_out = d_sum2.clone();
        if let Some(m) = &lc.drop_ff {
            d_ff_out *= m;
        }
        g.ff_w2 += &lc.ff_act.t().dot(&d_ff_out);
        g.ff_b2 += &d_ff_out.sum_axis(Axis(0));
        let mut d_pre = d_ff_out.dot(&layer.ff_w2.t());
        d_pre.zip_mut_with(&lc.ff_pre, |d, &x| *d *= gelu_grad(x));
        g.ff_w1 += &lc.y.t().dot(&d_pre);
        g.ff_b1 += &d_pre.sum_axis(Axis(0));
        let dy = d_sum2 + d_pre.dot(&layer.ff_w1.t());

        let d_sum1 = layer_norm_backward(&dy, &lc.ln1, layer.ln1_gain.view(), &mut g.ln1_gain, &mut g.ln1_bias);
        let mut d_att = d_sum1.clone();
        if let Some(m) = &lc.drop_attn {
            d_att *= m;
        }
        dz = d_sum1 + multi_head_backward(&d_att, &lc.x_in, &lc.attn, layer, g);
    }
    if let Some(m) = &cache.drop_emb {
        dz *= m;
    }
    let dz = layer_norm_backward(&dz, &cache.emb_ln, params.emb_ln_gain.view(), &mut grads.emb_ln_gain, &mut grads.emb_ln_bias);
    for (t, &id) in cache.ids.iter().enumerate() {
        let row = dz.row(t);
        let mut e = grads.tok_emb.row_mut(id as usize);
        e += &row;
        let mut p = grads.pos_emb.row_mut(t);
        p += &row;
    }
}

/// Accumulates `scale * d(loss)/d(theta)` for one detection example and
/// returns its unscaled loss.
pub(crate) fn detection_example_grad(
    params: &Parameters,
    sample: &DetectionSample,
    rng: Option<&mut ChaCha8Rng>,
    scale: f64,
    grads: &mut Parameters,
) -> Result<f64, ModelError> {
    let cache = encode_cached(params, &with_cls(params, &sample.encoding.ids), rng)?;
    let p = class_probs(params, &cache.hidden);
    let y = sample.label as usize;
    let loss = -p[y].max(PROB_FLOOR).ln();
    let mut dlogits = [p[0], p[1]];
    if p[y] > PROB_FLOOR {
        dlogits[y] -= 1.0;
    } else {
        dlogits = [0.0, 0.0];
    }
    let dlogits = ndarray::arr1(&dlogits) * scale;
    let h0 = cache.hidden.row(0);
    for i in 0..params.config.dim {
        for c in 0..2 {
            grads.cls_w[[i, c]] += h0[i] * dlogits[c];
        }
    }
    grads.cls_b += &dlogits;
    let mut d_hidden = Array2::zeros(cache.hidden.raw_dim());
    d_hidden.row_mut(0).assign(&params.cls_w.dot(&dlogits));
    backward_encoder(params, &cache, d_hidden, grads);
    Ok(loss)
}

/// Accumulates `scale * d(sum of masked-token losses)/d(theta)` for one
/// MLM sample; returns the unscaled loss sum.
pub(crate) fn mlm_example_grad(
    params: &Parameters,
    sample: &MlmSample,
    rng: Option<&mut ChaCha8Rng>,
    scale: f64,
    grads: &mut Parameters,
) -> Result<f64, ModelError> {
    if sample.targets.is_empty() {
        return Ok(0.0);
    }
    let cache = encode_cached(params, &with_cls(params, &sample.input_ids), rng)?;
    let rows: Vec<usize> = sample.targets.iter().map(|&(pos, _)| pos + 1).collect();
    let mut probs = mlm_logits(params, &cache.hidden, &rows);
    let mut loss = 0.0;
    for (mut row, &(_, target)) in probs.rows_mut().into_iter().zip(&sample.targets) {
        let r = row.as_slice_mut().expect("standard layout");
        softmax_in_place(r);
        let t = target as usize;
        if t >= params.config.vocab_size {
            return Err(ModelError::IdOutOfRange(target));
        }
        loss -= r[t].max(PROB_FLOOR).ln();
        if r[t] > PROB_FLOOR {
            r[t] -= 1.0;
        } else {
            r.fill(0.0);
        }
    }
    let dlogits = probs * scale;
    let h = cache.hidden.select(Axis(0), &rows);
    grads.mlm_w += &h.t().dot(&dlogits);
    grads.mlm_b += &dlogits.sum_axis(Axis(0));
    let dh = dlogits.dot(&params.mlm_w.t());
    let mut d_hidden = Array2::zeros(cache.hidden.raw_dim());
    for (k, &r) in rows.iter().enumerate() {
        let mut dst = d_hidden.row_mut(r);
        dst += &dh.row(k);
    }
    backward_encoder(params, &cache, d_hidden, grads);
    Ok(loss)
}

/// Exact gradient of `loss_scale` times the mean detection loss over
/// `batch`, with dropout off. Returns the gradients and the mean loss.
pub fn backward(
    params: &Parameters,
    batch: &[DetectionSample],
    loss_scale: f64,
) -> Result<(Gradients, f64), ModelError> {
    let mut grads = params.zeros_like();
    if batch.is_empty() {
        return Ok((grads, 0.0));
    }
    let scale = loss_scale / batch.len() as f64;
    let mut total = 0.0;
    for s in batch {
        total += detection_example_grad(params, s, None, scale, &mut grads)?;
    }
    Ok((grads, total / batch.len() as f64))
}

/// Exact gradient of `loss_scale` times the mean masked-token loss over
/// every masked position in `batch`.
pub fn backward_mlm(params: &Parameters, batch: &[MlmSample], loss_scale: f64) -> Result<(Gradients, f64), ModelError> {
    let mut grads = params.zeros_like();
    let count: usize = batch.iter().map(|s| s.targets.len()).sum();
    if count == 0 {
        return Ok((grads, 0.0));
    }
    let scale = loss_scale / count as f64;
    let mut total = 0.0;
    for s in batch {
        total += mlm_example_grad(params, s, None, scale, &mut grads)?;
    }
    Ok((grads, total / count as f64))
}
