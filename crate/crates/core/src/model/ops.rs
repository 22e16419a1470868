use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

pub(crate) const LN_EPS: f64 = 1e-5;

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows(s: Array2<f64>) -> Array2<f64> {
    let mut s = if s.is_standard_layout() { s } else { s.as_standard_layout().into_owned() };
    for mut row in s.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("standard layout"));
    }
    s
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Given `a = softmax(s)` row-wise and `da`, returns `ds`.
pub(crate) fn softmax_rows_backward(a: &Array2<f64>, da: &Array2<f64>) -> Array2<f64> {
    let mut ds = Array2::zeros(a.raw_dim());
    Zip::from(ds.rows_mut()).and(a.rows()).and(da.rows()).for_each(|mut out, a, da| {
        let dot = a.dot(&da);
        Zip::from(&mut out).and(&a).and(&da).for_each(|o, &ai, &dai| *o = ai * (dai - dot));
    });
    ds
}

/// Cached per-row statistics of a layer norm.
pub(crate) struct LayerNormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

pub(crate) fn layer_norm(x: &Array2<f64>, gain: ArrayView1<f64>, bias: ArrayView1<f64>) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.dot(&row) / d;
        *s = 1.0 / (var + LN_EPS).sqrt();
        let k = *s;
        row.mapv_inplace(|v| v * k);
    }
    let y = &xhat * &gain + bias;
    (y, LayerNormCache { xhat, inv_std })
}

/// Returns `dx`; accumulates `dgain` and `dbias`.
pub(crate) fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LayerNormCache,
    gain: ArrayView1<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * &gain;
    Zip::from(dx.rows_mut())
        .and(cache.xhat.rows())
        .and(&cache.inv_std)
        .for_each(|mut dxh, xh, &s| {
            let mean_d = dxh.sum() / d;
            let mean_dx = dxh.dot(&xh) / d;
            Zip::from(&mut dxh).and(&xh).for_each(|g, &x| *g = s * (*g - mean_d - x * mean_dx));
        });
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// `x @ w + b` for a row-major batch.
pub(crate) fn affine(x: &ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(w) + b
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn layer_norm_standardizes_rows() {
        let x = array![[1.0, 2.0, 3.0, 10.0], [-4.0, 0.5, 0.25, 8.0]];
        let g = Array1::ones(4);
        let b = Array1::zeros(4);
        let (y, _) = layer_norm(&x, g.view(), b.view());
        for row in y.rows() {
            let mean = row.sum() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let a = softmax_rows(array![[1.0, 0.0], [1000.0, -1000.0]]);
        for row in a.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-15);
        }
        assert!((a[[0, 0]] - 0.731_058_578_630_004_9).abs() < 1e-12);
    }
}
