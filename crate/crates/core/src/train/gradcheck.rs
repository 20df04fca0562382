//! Central finite differences against the analytic gradient of the summed
//! NLL over a few fixed samples, for every parameter element.

use super::{FcSpec, LayerSpec, Model, ModelConfig};
use crate::cells::CellKind;
use crate::classifier::softmax_nll;
use crate::error::Result;
use crate::numerics::{Activation, Rng, Tensor};

/// Inputs with their labels.
pub type Samples = Vec<(Tensor<f64>, usize)>;

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so that gradients at the level
/// of finite-difference round-off are compared absolutely.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Largest `|analytic - numeric|` over all entries.
    pub max_abs_error: f64,
    /// Every checked entry in parameter order.
    pub entries: Vec<GradcheckEntry>,
    /// Largest errors first.
    pub worst: Vec<GradcheckEntry>,
    /// Maximum relative error per named tensor.
    pub per_tensor: Vec<(String, f64)>,
}

impl GradcheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }

    /// `|analytic - numeric| <= atol + rtol * |numeric|` for every entry.
    pub fn within(&self, atol: f64, rtol: f64) -> bool {
        self.entries
            .iter()
            .all(|e| (e.analytic - e.numeric).abs() <= atol + rtol * e.numeric.abs())
    }
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Small model for checking: 6×6×2 input, one ReNet layer of 2×2 patches
/// with `d = 3`, one hidden layer of 8 tanh units and 3 classes. Noise is
/// disabled.
pub fn tiny_config(cell: CellKind) -> ModelConfig {
    ModelConfig {
        dataset: "gradcheck".into(),
        input: (6, 6, 2),
        classes: 3,
        renet: vec![LayerSpec {
            patch: (2, 2),
            hidden: 3,
            cell,
        }],
        fc: vec![FcSpec {
            units: 8,
            activation: Activation::Tanh,
        }],
        renet_dropout: 0.0,
        fc_dropout: 0.0,
        input_mask: 0.0,
        ..ModelConfig::default()
    }
}

/// Random model and inputs for `cfg`, drawn from `seed`.
pub fn tiny_problem(cfg: &ModelConfig, seed: u64, samples: usize) -> Result<(Model<f64>, Samples)> {
    let mut rng = Rng::new(seed);
    let mut model = Model::build(cfg, &mut rng)?;
    // Non-zero biases so their gradients are exercised away from symmetry.
    for (name, t) in model.tensors_mut() {
        if name.ends_with(".b") || name.ends_with(".b_g") || name.ends_with(".bias") {
            for v in t.data_mut() {
                *v += rng.uniform_range(-0.3, 0.3);
            }
        }
    }
    let (w, h, c) = cfg.input;
    let data = (0..samples)
        .map(|_| {
            let x = Tensor::from_fn(&[w, h, c], |_| rng.uniform_range(-1.0, 1.0));
            (x, rng.below(cfg.classes as u64) as usize)
        })
        .collect();
    Ok((model, data))
}

fn total_loss(model: &Model<f64>, samples: &[(Tensor<f64>, usize)]) -> Result<f64> {
    let mut sum = 0.0;
    for (x, y) in samples {
        sum += softmax_nll(&model.logits(x)?, *y)?.0;
    }
    Ok(sum)
}

/// Backpropagated gradient of the summed NLL.
pub fn analytic_gradient(model: &Model<f64>, samples: &[(Tensor<f64>, usize)]) -> Result<Model<f64>> {
    let mut g = model.zeros_like();
    for (x, y) in samples {
        model.loss_and_grad(x, *y, None, &mut g)?;
    }
    Ok(g)
}

pub fn gradcheck(model: &Model<f64>, samples: &[(Tensor<f64>, usize)], eps: f64) -> Result<GradcheckReport> {
    gradcheck_with(model, samples, eps, analytic_gradient)
}

/// As [`gradcheck`] with the analytic gradient supplied by `analytic`.
pub fn gradcheck_with(
    model: &Model<f64>,
    samples: &[(Tensor<f64>, usize)],
    eps: f64,
    analytic: impl Fn(&Model<f64>, &[(Tensor<f64>, usize)]) -> Result<Model<f64>>,
) -> Result<GradcheckReport> {
    let grads = analytic(model, samples)?;
    let mut probe = model.clone();
    let mut entries = Vec::new();
    let names: Vec<(String, usize)> = model.tensors().into_iter().map(|(n, t)| (n, t.len())).collect();
    let mut per_tensor = Vec::with_capacity(names.len());
    let mut max_abs_error = 0.0f64;
    for (t, (name, len)) in names.iter().enumerate() {
        let mut worst = 0.0f64;
        for k in 0..*len {
            let orig = probe.tensors()[t].1.data()[k];
            probe.tensors_mut()[t].1.data_mut()[k] = orig + eps;
            let up = total_loss(&probe, samples)?;
            probe.tensors_mut()[t].1.data_mut()[k] = orig - eps;
            let down = total_loss(&probe, samples)?;
            probe.tensors_mut()[t].1.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grads.tensors()[t].1.data()[k];
            let rel = rel_error(a, numeric);
            max_abs_error = max_abs_error.max((a - numeric).abs());
            worst = worst.max(rel);
            entries.push(GradcheckEntry {
                name: name.clone(),
                index: k,
                analytic: a,
                numeric,
                rel_error: rel,
            });
        }
        per_tensor.push((name.clone(), worst));
    }
    let checked = entries.len();
    let mut worst = entries.clone();
    worst.sort_by(|a, b| b.rel_error.total_cmp(&a.rel_error));
    let max_rel_error = worst.first().map_or(0.0, |e| e.rel_error);
    worst.truncate(10);
    Ok(GradcheckReport {
        checked,
        max_rel_error,
        max_abs_error,
        entries,
        worst,
        per_tensor,
    })
}
