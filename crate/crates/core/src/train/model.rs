use crate::cells::InitScheme;
use crate::classifier::{fc_backward, fc_forward, flatten, softmax_nll, FcParams};
use crate::error::{Error, Result};
use crate::layer::{dropout_mask, layer_backward, layer_forward, ReNetLayerConfig, ReNetLayerParams, ReNetLayerState, SweepDropout};
use crate::numerics::{Activation, Rng, Scalar, Tensor};

use super::ModelConfig;

/// One stage of the network with its input and output shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePlan {
    pub name: String,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub params: usize,
}

/// Shape chain of `cfg`: every ReNet layer, then every fully-connected
/// layer including the final softmax layer.
pub fn plan(cfg: &ModelConfig) -> Result<Vec<StagePlan>> {
    let (layers, _) = layer_configs(cfg)?;
    let mut stages = Vec::new();
    for (l, lc) in layers.iter().enumerate() {
        stages.push(StagePlan {
            name: format!("renet{l}"),
            input: vec![lc.input.0, lc.input.1, lc.input.2],
            output: lc.output_shape().to_vec(),
            params: lc.param_count(),
        });
    }
    let mut width: usize = layers.last().unwrap().output_shape().iter().product();
    for (k, (units, _)) in fc_shapes(cfg).into_iter().enumerate() {
        stages.push(StagePlan {
            name: format!("fc{k}"),
            input: vec![width],
            output: vec![units],
            params: units * width + units,
        });
        width = units;
    }
    Ok(stages)
}

fn layer_configs(cfg: &ModelConfig) -> Result<(Vec<ReNetLayerConfig>, [usize; 3])> {
    let mut shape = cfg.input;
    let mut out = Vec::with_capacity(cfg.renet.len());
    for (l, spec) in cfg.renet.iter().enumerate() {
        let lc = ReNetLayerConfig::new(shape, spec.patch, spec.hidden, spec.cell)
            .map_err(|e| Error::Geometry(format!("renet{l}: {e}")))?;
        let [i, j, f] = lc.output_shape();
        shape = (i, j, f);
        out.push(lc);
    }
    Ok((out, [shape.0, shape.1, shape.2]))
}

/// `(units, activation)` of every fully-connected layer, output layer last.
fn fc_shapes(cfg: &ModelConfig) -> Vec<(usize, Activation)> {
    cfg.fc
        .iter()
        .map(|f| (f.units, f.activation))
        .chain(std::iter::once((cfg.classes, Activation::Identity)))
        .collect()
}

/// Stochastic corruption applied during training.
pub struct Noise<'a> {
    pub input_mask: f64,
    pub renet_dropout: f64,
    pub fc_dropout: f64,
    pub rng: &'a mut Rng,
}

impl<'a> Noise<'a> {
    pub fn from_config(cfg: &ModelConfig, rng: &'a mut Rng) -> Self {
        Self {
            input_mask: cfg.input_mask,
            renet_dropout: cfg.renet_dropout,
            fc_dropout: cfg.fc_dropout,
            rng,
        }
    }
}

/// Forward intermediates of one sample.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    renet: Vec<ReNetLayerState<T>>,
    h_masks: Vec<Option<Vec<T>>>,
    fc_inputs: Vec<Tensor<T>>,
    fc_outputs: Vec<Tensor<T>>,
    fc_masks: Vec<Option<Vec<T>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub layer_cfgs: Vec<ReNetLayerConfig>,
    pub renet: Vec<ReNetLayerParams<T>>,
    /// Hidden layers followed by the softmax layer.
    pub fc: Vec<FcParams<T>>,
}

fn apply_mask<T: Scalar>(t: &mut Tensor<T>, mask: &[T]) {
    for (v, &m) in t.data_mut().iter_mut().zip(mask) {
        *v *= m;
    }
}

impl<T: Scalar> Model<T> {
    /// Randomly initialized model.
    pub fn build(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        Self::construct(cfg, Some(rng))
    }

    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        Self::construct(cfg, None)
    }

    fn construct(cfg: &ModelConfig, mut rng: Option<&mut Rng>) -> Result<Self> {
        cfg.validate()?;
        let (layer_cfgs, out) = layer_configs(cfg)?;
        let renet = layer_cfgs
            .iter()
            .map(|lc| match rng.as_deref_mut() {
                Some(r) => ReNetLayerParams::init(lc, r, InitScheme::default()),
                None => ReNetLayerParams::zeros(lc),
            })
            .collect();
        let mut width: usize = out.iter().product();
        let mut fc = Vec::new();
        for (units, act) in fc_shapes(cfg) {
            fc.push(match rng.as_deref_mut() {
                Some(r) => FcParams::init(width, units, act, r),
                None => FcParams::zeros(width, units, act),
            });
            width = units;
        }
        Ok(Self {
            config: cfg.clone(),
            layer_cfgs,
            renet,
            fc,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            layer_cfgs: self.layer_cfgs.clone(),
            renet: self.renet.iter().map(|p| p.zeros_like()).collect(),
            fc: self.fc.iter().map(|p| p.zeros_like()).collect(),
        }
    }

    /// Named parameter registry in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (l, p) in self.renet.iter().enumerate() {
            out.extend(p.tensors().into_iter().map(|(n, t)| (format!("renet{l}.{n}"), t)));
        }
        for (k, p) in self.fc.iter().enumerate() {
            out.extend(p.tensors().into_iter().map(|(n, t)| (format!("fc{k}.{n}"), t)));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (l, p) in self.renet.iter_mut().enumerate() {
            out.extend(p.tensors_mut().into_iter().map(|(n, t)| (format!("renet{l}.{n}"), t)));
        }
        for (k, p) in self.fc.iter_mut().enumerate() {
            out.extend(p.tensors_mut().into_iter().map(|(n, t)| (format!("fc{k}.{n}"), t)));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Elementwise `self += other`; both must share a config.
    pub fn accumulate(&mut self, other: &Model<T>) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for (_, t) in self.tensors_mut() {
            t.scale(factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Logits of one `[w, h, c]` image. With `noise`, applies input masking
    /// and inverted dropout; without, the pass is deterministic.
    pub fn forward(&self, x: &Tensor<T>, mut noise: Option<Noise<'_>>) -> Result<(Tensor<T>, Trace<T>)> {
        let (w, h, c) = self.config.input;
        if x.shape() != [w, h, c] {
            return Err(Error::shape("model input", x.shape(), &[w, h, c]));
        }
        let mut cur = x.clone();
        if let Some(n) = noise.as_mut().filter(|n| n.input_mask > 0.0) {
            let keep = 1.0 - n.input_mask;
            for v in cur.data_mut() {
                if !n.rng.bernoulli(keep) {
                    *v = T::zero();
                }
            }
        }

        let mut trace = Trace {
            renet: Vec::with_capacity(self.renet.len()),
            h_masks: Vec::with_capacity(self.renet.len()),
            fc_inputs: Vec::with_capacity(self.fc.len()),
            fc_outputs: Vec::with_capacity(self.fc.len()),
            fc_masks: Vec::with_capacity(self.fc.len()),
        };
        for (lc, p) in self.layer_cfgs.iter().zip(&self.renet) {
            let drop = noise.as_mut().filter(|n| n.renet_dropout > 0.0).map(|n| SweepDropout {
                rate: n.renet_dropout,
                rng: &mut *n.rng,
            });
            let (mut out, state) = layer_forward(&cur, lc, p, drop)?;
            let mask = noise
                .as_mut()
                .filter(|n| n.renet_dropout > 0.0)
                .map(|n| dropout_mask::<T>(out.len(), n.renet_dropout, n.rng));
            if let Some(m) = &mask {
                apply_mask(&mut out, m);
            }
            trace.renet.push(state);
            trace.h_masks.push(mask);
            cur = out;
        }

        let mut f = flatten(&cur);
        let last = self.fc.len() - 1;
        for (k, p) in self.fc.iter().enumerate() {
            let y = fc_forward(&f, p)?;
            let mask = match noise.as_mut() {
                Some(n) if k < last && n.fc_dropout > 0.0 => Some(dropout_mask::<T>(y.len(), n.fc_dropout, n.rng)),
                _ => None,
            };
            let mut next = y.clone();
            if let Some(m) = &mask {
                apply_mask(&mut next, m);
            }
            trace.fc_inputs.push(f);
            trace.fc_outputs.push(y);
            trace.fc_masks.push(mask);
            f = next;
        }
        Ok((f, trace))
    }

    /// Accumulates parameter gradients of a scalar loss whose gradient with
    /// respect to the logits is `grad_logits`.
    pub fn backward(&self, trace: &Trace<T>, grad_logits: &Tensor<T>, grads: &mut Model<T>) -> Result<()> {
        if trace.fc_outputs.len() != self.fc.len() || trace.renet.len() != self.renet.len() {
            return Err(Error::Geometry("trace does not belong to this model".into()));
        }
        let mut g = grad_logits.clone();
        for k in (0..self.fc.len()).rev() {
            if let Some(m) = &trace.fc_masks[k] {
                apply_mask(&mut g, m);
            }
            g = fc_backward(&self.fc[k], &trace.fc_inputs[k], &trace.fc_outputs[k], &g, &mut grads.fc[k])?;
        }
        let last = self.layer_cfgs.last().unwrap().output_shape();
        let mut g = g.reshape(&last)?;
        for l in (0..self.renet.len()).rev() {
            if let Some(m) = &trace.h_masks[l] {
                apply_mask(&mut g, m);
            }
            g = layer_backward(&self.renet[l], &trace.renet[l], &g, &mut grads.renet[l])?;
        }
        Ok(())
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x, None)?.0)
    }

    /// NLL of one sample; gradients are added into `grads`.
    pub fn loss_and_grad(&self, x: &Tensor<T>, label: usize, noise: Option<Noise<'_>>, grads: &mut Model<T>) -> Result<(f64, Tensor<T>)> {
        let (logits, trace) = self.forward(x, noise)?;
        let (loss, g) = softmax_nll(&logits, label)?;
        self.backward(&trace, &g, grads)?;
        Ok((loss, logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellKind;
    use crate::train::{FcSpec, LayerSpec};

    fn cfg(text: &str) -> ModelConfig {
        text.parse().unwrap()
    }

    fn minimal() -> ModelConfig {
        cfg("input = 4,4,1\nclasses = 2\nrenet_patch = 2x2\nrenet_hidden = 2\nrenet_cell = gru\nfc_hidden = 4\nfc_activation = relu")
    }

    #[test]
    fn minimal_parameter_count_by_hand() {
        let c = minimal();
        // Each GRU cell: 3 blocks of (d·in + d·d + d). Vertical in = 2·2·1,
        // horizontal in = 2d; both give 3·(8 + 4 + 2) = 42.
        let renet = 4 * 3 * (2 * 4 + 2 * 2 + 2);
        // 2×2 grid × 2d features = 16 inputs to 4 units, then 4 → 2.
        let fc = (16 * 4 + 4) + (4 * 2 + 2);
        assert_eq!(renet + fc, 246);
        let m = Model::<f64>::zeros(&c).unwrap();
        assert_eq!(m.param_count(), 246);
        assert_eq!(plan(&c).unwrap().iter().map(|s| s.params).sum::<usize>(), 246);
    }

    #[test]
    fn registry_names_are_deterministic() {
        let m = Model::<f32>::zeros(&minimal()).unwrap();
        let names: Vec<String> = m.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "renet0.vfwd.w");
        assert!(names.contains(&"renet0.hrev.b_g".to_string()));
        assert_eq!(names[names.len() - 2..], ["fc1.weight".to_string(), "fc1.bias".to_string()]);
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }

    #[test]
    fn shape_chain_error_names_the_layer() {
        let mut c = minimal();
        c.input = (6, 6, 1);
        c.renet.push(LayerSpec {
            patch: (2, 2),
            hidden: 2,
            cell: CellKind::Tanh,
        });
        let err = plan(&c).unwrap_err().to_string();
        assert!(err.contains("renet1"), "{err}");
    }

    #[test]
    fn noise_free_training_pass_equals_evaluation() {
        let mut c = minimal();
        c.fc_dropout = 0.0;
        c.renet_dropout = 0.0;
        c.input_mask = 0.0;
        let mut rng = Rng::new(1);
        let m = Model::<f64>::build(&c, &mut rng).unwrap();
        let x = Tensor::from_fn(&[4, 4, 1], |_| rng.uniform());
        let mut noise_rng = Rng::new(2);
        let (a, _) = m.forward(&x, Some(Noise::from_config(&c, &mut noise_rng))).unwrap();
        assert_eq!(a, m.logits(&x).unwrap());
        assert_eq!(noise_rng, Rng::new(2));
    }

    #[test]
    fn noise_changes_training_pass() {
        let c = minimal();
        let mut rng = Rng::new(1);
        let m = Model::<f64>::build(&c, &mut rng).unwrap();
        let x = Tensor::from_fn(&[4, 4, 1], |_| rng.uniform() + 0.5);
        let clean = m.logits(&x).unwrap();
        let differs = (0..10).any(|s| {
            let mut r = Rng::new(s);
            m.forward(&x, Some(Noise::from_config(&c, &mut r))).unwrap().0 != clean
        });
        assert!(differs);
    }

    #[test]
    fn backward_matches_finite_differences_with_fixed_noise() {
        let mut c = minimal();
        c.fc = vec![FcSpec {
            units: 5,
            activation: Activation::Tanh,
        }];
        c.renet[0].cell = CellKind::Lstm;
        let mut rng = Rng::new(4);
        let m = Model::<f64>::build(&c, &mut rng).unwrap();
        let x = Tensor::from_fn(&[4, 4, 1], |_| rng.uniform());
        // Re-seeding per evaluation freezes the masks.
        let loss = |m: &Model<f64>| {
            let mut r = Rng::new(11);
            let (l, _) = softmax_nll(&m.forward(&x, Some(Noise::from_config(&c, &mut r))).unwrap().0, 1).unwrap();
            l
        };
        let mut grads = m.zeros_like();
        let mut r = Rng::new(11);
        m.loss_and_grad(&x, 1, Some(Noise::from_config(&c, &mut r)), &mut grads).unwrap();
        let analytic: Vec<f64> = grads.tensors().iter().flat_map(|(_, t)| t.data().to_vec()).collect();
        let mut k = 0;
        let eps = 1e-5;
        let count = m.param_count();
        for idx in (0..count).step_by(7) {
            let mut p = m.clone();
            let mut q = m.clone();
            let mut seen = 0;
            for ((_, a), (_, b)) in p.tensors_mut().into_iter().zip(q.tensors_mut()) {
                if idx >= seen && idx < seen + a.len() {
                    a.data_mut()[idx - seen] += eps;
                    b.data_mut()[idx - seen] -= eps;
                }
                seen += a.len();
            }
            let num = (loss(&p) - loss(&q)) / (2.0 * eps);
            let a = analytic[idx];
            assert!((num - a).abs() <= 1e-7 * a.abs().max(1e-3), "param {idx}: {num} vs {a}");
            k += 1;
        }
        assert!(k > 20);
    }
}
