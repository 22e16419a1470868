use super::Parameters;

/// Adam with decoupled weight decay. Decay applies to matrices only;
/// biases and layer-norm parameters are left alone. Tensors whose name
/// starts with a frozen prefix are never touched.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub frozen: Vec<String>,
    m: Parameters,
    v: Parameters,
    t: i32,
}

impl AdamW {
    pub fn new(params: &Parameters, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            frozen: Vec::new(),
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for ((((name, mut p), (_, g)), (_, mut m)), (_, mut v)) in tensors {
            if self.frozen.iter().any(|f| name.starts_with(f.as_str())) {
                continue;
            }
            let decay = if p.ndim() == 2 { wd } else { 0.0 };
            ndarray::Zip::from(&mut p).and(&g).and(&mut m).and(&mut v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                *p -= lr * (update + decay * *p);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = ModelConfig { layers: 1, heads: 1, dim: 2, ff_dim: 2, max_len: 3, vocab_size: 3, dropout: 0.0, cls_id: 1 };
        let mut p = Parameters::init(&cfg, 0).unwrap();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.cls_b[0] = 3.0;
        g.cls_b[1] = -0.5;
        let mut opt = AdamW::new(&p, 0.0);
        opt.step(&mut p, &g, 0.1);
        assert!((p.cls_b[0] - (before.cls_b[0] - 0.1)).abs() < 1e-6);
        assert!((p.cls_b[1] - (before.cls_b[1] + 0.1)).abs() < 1e-6);
        assert_eq!(p.tok_emb, before.tok_emb);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn frozen_tensors_do_not_decay() {
        let cfg = ModelConfig { layers: 1, heads: 1, dim: 2, ff_dim: 2, max_len: 3, vocab_size: 3, dropout: 0.0, cls_id: 1 };
        let mut p = Parameters::init(&cfg, 0).unwrap();
        let before = p.clone();
        let g = p.zeros_like();
        let mut opt = AdamW::new(&p, 0.5);
        opt.frozen = vec!["cls.".into()];
        opt.step(&mut p, &g, 0.1);
        assert_eq!(p.cls_w, before.cls_w);
        assert_ne!(p.mlm_w, before.mlm_w);
    }
}
