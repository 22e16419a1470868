use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use super::ops::{softmax_rows, softmax_rows_backward};
use super::{LayerParams, ModelError};

/// Per-head attention matrices of one layer, each `(l'+1) x (l'+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    pub heads: Vec<Array2<f64>>,
}

impl AttentionTensor {
    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn positions(&self) -> usize {
        self.heads.first().map_or(0, |h| h.nrows())
    }

    /// The `[CLS]` query row of every head restricted to payload positions
    /// (column 0, the `[CLS]` key itself, is dropped) and renormalized to
    /// sum to one.
    pub fn cls_payload_rows(&self) -> Vec<Vec<f64>> {
        self.heads
            .iter()
            .map(|h| {
                let row = h.row(0);
                let payload = row.slice(s![1..]);
                let total = payload.sum();
                payload.iter().map(|v| v / total).collect()
            })
            .collect()
    }
}

/// `softmax(Q K^T / sqrt(d_head)) V`. Returns the output and the attention matrix.
pub fn scaled_self_attention(
    q: &ArrayView2<f64>,
    k: &ArrayView2<f64>,
    v: &ArrayView2<f64>,
    d_head: usize,
) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
    if d_head == 0 {
        return Err(ModelError::Shape("d_head must be positive".into()));
    }
    if q.nrows() != k.nrows() || k.nrows() != v.nrows() {
        return Err(ModelError::Shape(format!(
            "row counts differ: Q {}, K {}, V {}",
            q.nrows(),
            k.nrows(),
            v.nrows()
        )));
    }
    if q.ncols() != k.ncols() {
        return Err(ModelError::Shape("Q and K widths differ".into()));
    }
    let scores = q.dot(&k.t()) / (d_head as f64).sqrt();
    let alpha = softmax_rows(scores);
    Ok((alpha.dot(v), alpha))
}

/// Intermediates of one multi-head attention call kept for the backward pass.
pub(crate) struct AttentionCache {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub alpha: Vec<Array2<f64>>,
    pub concat: Array2<f64>,
}

pub(crate) fn multi_head_cached(x: &Array2<f64>, layer: &LayerParams, heads: usize) -> (Array2<f64>, AttentionCache) {
    let d = x.ncols();
    let dh = d / heads;
    let q = x.dot(&layer.wq);
    let k = x.dot(&layer.wk);
    let v = x.dot(&layer.wv);
    let mut outs = Vec::with_capacity(heads);
    let mut alpha = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let (o, a) = scaled_self_attention(&q.slice(cols), &k.slice(cols), &v.slice(cols), dh)
            .expect("projections share row counts");
        outs.push(o);
        alpha.push(a);
    }
    let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
    let concat = concatenate(Axis(1), &views).expect("head outputs share row counts");
    let out = concat.dot(&layer.wo);
    (out, AttentionCache { q, k, v, alpha, concat })
}

/// Concatenates the `heads` head outputs and projects them with `W_O`.
pub fn multi_head(x: &Array2<f64>, layer: &LayerParams, heads: usize) -> Result<(Array2<f64>, AttentionTensor), ModelError> {
    let d = layer.wq.nrows();
    if x.ncols() != d {
        return Err(ModelError::Shape(format!("input width {} but model dim {d}", x.ncols())));
    }
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(ModelError::Shape(format!("{heads} heads do not divide dim {d}")));
    }
    let (out, cache) = multi_head_cached(x, layer, heads);
    Ok((out, AttentionTensor { heads: cache.alpha }))
}

/// Backward through `multi_head_cached`. Returns `dx`; accumulates weight grads.
pub(crate) fn multi_head_backward(
    dout: &Array2<f64>,
    x: &Array2<f64>,
    cache: &AttentionCache,
    layer: &LayerParams,
    grads: &mut LayerParams,
) -> Array2<f64> {
    let heads = cache.alpha.len();
    let d = x.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    grads.wo += &cache.concat.t().dot(dout);
    let dconcat = dout.dot(&layer.wo.t());

    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for (h, a) in cache.alpha.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let d_o = dconcat.slice(cols);
        let vh = cache.v.slice(cols);
        let da = d_o.dot(&vh.t());
        dv.slice_mut(cols).assign(&a.t().dot(&d_o));
        let dscores = softmax_rows_backward(a, &da) * scale;
        dq.slice_mut(cols).assign(&dscores.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&dscores.t().dot(&cache.q.slice(cols)));
    }
    grads.wq += &x.t().dot(&dq);
    grads.wk += &x.t().dot(&dk);
    grads.wv += &x.t().dot(&dv);
    dq.dot(&layer.wq.t()) + dk.dot(&layer.wk.t()) + dv.dot(&layer.wv.t())
}
