use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub ff_w1: Array2<f64>,
    pub ff_b1: Array1<f64>,
    pub ff_w2: Array2<f64>,
    pub ff_b2: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
}

/// All trainable weights. Gradients and optimizer moments reuse this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub config: ModelConfig,
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub emb_ln_gain: Array1<f64>,
    pub emb_ln_bias: Array1<f64>,
    pub layers: Vec<LayerParams>,
    pub cls_w: Array2<f64>,
    pub cls_b: Array1<f64>,
    pub mlm_w: Array2<f64>,
    pub mlm_b: Array1<f64>,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let dist = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).expect("valid std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-0.05..0.05))
}

impl Parameters {
    /// Embeddings uniform in (-0.05, 0.05), summed and layer-normed before
    /// the first encoder layer; linear weights normal with
    /// std `1/sqrt(fan_in)`; biases zero; layer-norm gains one.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.dim;
        let f = config.ff_dim;
        let tok_emb = uniform_matrix(&mut rng, config.vocab_size, d);
        let pos_emb = uniform_matrix(&mut rng, config.max_len, d);
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                wq: normal_matrix(&mut rng, d, d),
                wk: normal_matrix(&mut rng, d, d),
                wv: normal_matrix(&mut rng, d, d),
                wo: normal_matrix(&mut rng, d, d),
                ln1_gain: Array1::ones(d),
                ln1_bias: Array1::zeros(d),
                ff_w1: normal_matrix(&mut rng, d, f),
                ff_b1: Array1::zeros(f),
                ff_w2: normal_matrix(&mut rng, f, d),
                ff_b2: Array1::zeros(d),
                ln2_gain: Array1::ones(d),
                ln2_bias: Array1::zeros(d),
            })
            .collect();
        Ok(Parameters {
            config: config.clone(),
            tok_emb,
            pos_emb,
            emb_ln_gain: Array1::ones(d),
            emb_ln_bias: Array1::zeros(d),
            layers,
            cls_w: normal_matrix(&mut rng, d, 2),
            cls_b: Array1::zeros(2),
            mlm_w: normal_matrix(&mut rng, d, config.vocab_size),
            mlm_b: Array1::zeros(config.vocab_size),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Every tensor with a stable dotted name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.view().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view().into_dyn()),
            ("emb_ln.gain".to_string(), self.emb_ln_gain.view().into_dyn()),
            ("emb_ln.bias".to_string(), self.emb_ln_bias.view().into_dyn()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("layer{i}.{n}");
            out.extend([
                (p("wq"), l.wq.view().into_dyn()),
                (p("wk"), l.wk.view().into_dyn()),
                (p("wv"), l.wv.view().into_dyn()),
                (p("wo"), l.wo.view().into_dyn()),
                (p("ln1_gain"), l.ln1_gain.view().into_dyn()),
                (p("ln1_bias"), l.ln1_bias.view().into_dyn()),
                (p("ff_w1"), l.ff_w1.view().into_dyn()),
                (p("ff_b1"), l.ff_b1.view().into_dyn()),
                (p("ff_w2"), l.ff_w2.view().into_dyn()),
                (p("ff_b2"), l.ff_b2.view().into_dyn()),
                (p("ln2_gain"), l.ln2_gain.view().into_dyn()),
                (p("ln2_bias"), l.ln2_bias.view().into_dyn()),
            ]);
        }
        out.extend([
            ("cls.w".to_string(), self.cls_w.view().into_dyn()),
            ("cls.b".to_string(), self.cls_b.view().into_dyn()),
            ("mlm.w".to_string(), self.mlm_w.view().into_dyn()),
            ("mlm.b".to_string(), self.mlm_b.view().into_dyn()),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.view_mut().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view_mut().into_dyn()),
            ("emb_ln.gain".to_string(), self.emb_ln_gain.view_mut().into_dyn()),
            ("emb_ln.bias".to_string(), self.emb_ln_bias.view_mut().into_dyn()),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |n: &str| format!("layer{i}.{n}");
            out.extend([
                (p("wq"), l.wq.view_mut().into_dyn()),
                (p("wk"), l.wk.view_mut().into_dyn()),
                (p("wv"), l.wv.view_mut().into_dyn()),
                (p("wo"), l.wo.view_mut().into_dyn()),
                (p("ln1_gain"), l.ln1_gain.view_mut().into_dyn()),
                (p("ln1_bias"), l.ln1_bias.view_mut().into_dyn()),
                (p("ff_w1"), l.ff_w1.view_mut().into_dyn()),
                (p("ff_b1"), l.ff_b1.view_mut().into_dyn()),
                (p("ff_w2"), l.ff_w2.view_mut().into_dyn()),
                (p("ff_b2"), l.ff_b2.view_mut().into_dyn()),
                (p("ln2_gain"), l.ln2_gain.view_mut().into_dyn()),
                (p("ln2_bias"), l.ln2_bias.view_mut().into_dyn()),
            ]);
        }
        out.extend([
            ("cls.w".to_string(), self.cls_w.view_mut().into_dyn()),
            ("cls.b".to_string(), self.cls_b.view_mut().into_dyn()),
            ("mlm.w".to_string(), self.mlm_w.view_mut().into_dyn()),
            ("mlm.b".to_string(), self.mlm_b.view_mut().into_dyn()),
        ]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `self *= k` elementwise over every tensor.
    pub fn scale(&mut self, k: f64) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|v| v * k);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, t)| t.iter()).map(|v| v * v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_shaped() {
        let cfg = ModelConfig::new(50, 1);
        let a = Parameters::init(&cfg, 3).unwrap();
        let b = Parameters::init(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tok_emb.dim(), (50, 64));
        assert_eq!(a.layers.len(), 2);
        assert!(a.all_finite());
        assert!(a.tok_emb.iter().all(|v| v.abs() < 0.05));
        assert_eq!(a.layers[0].ln1_gain.sum(), 64.0);
    }

    #[test]
    fn tensor_names_are_unique() {
        let p = Parameters::init(&ModelConfig::new(10, 1), 0).unwrap();
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        let mut_names: Vec<String> = p.clone().tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, mut_names);
    }
}
