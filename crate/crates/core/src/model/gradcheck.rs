use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{backward, backward_mlm, DetectionSample, Gradients, MlmSample, ModelError, Parameters};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Coordinates sampled per tensor (all of them when the tensor is smaller).
pub const COORDS_PER_TENSOR: usize = 50;
/// Denominator floor for the relative error, so that gradients that are
/// zero up to rounding on both sides compare as equal.
pub const REL_FLOOR: f64 = 1e-6;

/// A scalar loss whose gradient `backward` claims to compute exactly.
#[derive(Debug, Clone)]
pub enum Objective {
    Detection(Vec<DetectionSample>),
    Mlm(Vec<MlmSample>),
}

impl Objective {
    pub fn loss_and_gradient(&self, params: &Parameters) -> Result<(f64, Gradients), ModelError> {
        let (g, l) = match self {
            Objective::Detection(b) => backward(params, b, 1.0)?,
            Objective::Mlm(b) => backward_mlm(params, b, 1.0)?,
        };
        Ok((l, g))
    }

    fn loss(&self, params: &Parameters) -> Result<f64, ModelError> {
        Ok(self.loss_and_gradient(params)?.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tensor: String,
    pub index: Vec<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates_checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against central differences of `objective` on
/// sampled coordinates of every tensor.
pub fn compare_gradients(
    params: &Parameters,
    objective: &Objective,
    analytic: &Gradients,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        tensor: String::new(),
        index: Vec::new(),
        analytic: 0.0,
        numeric: 0.0,
        coordinates_checked: 0,
        tolerance,
        passed: true,
    };
    let shapes: Vec<(String, Vec<usize>)> =
        params.tensors().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    let grads = analytic.tensors();
    for (ti, (name, shape)) in shapes.iter().enumerate() {
        let len: usize = shape.iter().product();
        let picks = sample(&mut rng, len, len.min(COORDS_PER_TENSOR)).into_vec();
        for flat in picks {
            let index = unravel(flat, shape);
            let original = params.tensors()[ti].1[index.as_slice()];
            let nudge = |p: &mut Parameters, v: f64| {
                p.tensors_mut()[ti].1[index.as_slice()] = v;
            };
            nudge(&mut probe, original + FD_STEP);
            let plus = objective.loss(&probe)?;
            nudge(&mut probe, original - FD_STEP);
            let minus = objective.loss(&probe)?;
            nudge(&mut probe, original);
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = grads[ti].1[index.as_slice()];
            let err = relative_error(a, numeric);
            report.coordinates_checked += 1;
            if err > report.max_rel_error || report.tensor.is_empty() {
                report.max_rel_error = err;
                report.tensor = name.clone();
                report.index = index;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_error < tolerance;
    Ok(report)
}

/// Checks the analytic gradient of `objective` at `params`.
pub fn grad_check(params: &Parameters, objective: &Objective, tolerance: f64) -> Result<GradCheckReport, ModelError> {
    let (_, g) = objective.loss_and_gradient(params)?;
    compare_gradients(params, objective, &g, tolerance, 0)
}

fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for (i, &s) in shape.iter().enumerate().rev() {
        idx[i] = flat % s;
        flat /= s;
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tokenizer::SubtokenEncoding;

    fn tiny() -> Parameters {
        let cfg = ModelConfig { layers: 1, heads: 2, dim: 8, ff_dim: 16, max_len: 9, vocab_size: 14, dropout: 0.1, cls_id: 1 };
        Parameters::init(&cfg, 21).unwrap()
    }

    fn detection() -> Objective {
        let s = |ids: &[u32], label| DetectionSample {
            encoding: SubtokenEncoding { ids: ids.to_vec(), spans: (0..ids.len()).map(|i| (i, i)).collect() },
            label,
        };
        Objective::Detection(vec![s(&[4, 5, 6, 7, 8, 9, 10, 11], 1), s(&[12, 4, 13], 0)])
    }

    #[test]
    fn detection_gradients_match_finite_differences() {
        let r = grad_check(&tiny(), &detection(), 1e-4).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.coordinates_checked >= 50 * 4);
    }

    #[test]
    fn mlm_gradients_match_finite_differences() {
        let obj = Objective::Mlm(vec![
            MlmSample { input_ids: vec![4, 2, 6, 7, 2, 9, 10, 11], targets: vec![(1, 5), (4, 8)] },
            MlmSample { input_ids: vec![2, 13], targets: vec![(0, 12)] },
        ]);
        let r = grad_check(&tiny(), &obj, 1e-4).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn corrupted_query_gradient_is_named() {
        let p = tiny();
        let obj = detection();
        let (_, mut g) = obj.loss_and_gradient(&p).unwrap();
        g.layers[0].wq.mapv_inplace(|v| v * 1.5 + 1e-3);
        let r = compare_gradients(&p, &obj, &g, 1e-4, 0).unwrap();
        assert!(!r.passed);
        assert_eq!(r.tensor, "layer0.wq");
    }

    #[test]
    fn unravel_is_row_major() {
        assert_eq!(unravel(5, &[2, 3]), vec![1, 2]);
        assert_eq!(unravel(0, &[4]), vec![0]);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-12, -1e-12) < 1e-5);
    }
}
