//! Adam with bias correction over a flat, named parameter registry.

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rescale the whole gradient when its global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
        }
    }
}

/// First and second moment estimates of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub name: String,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    /// Number of updates applied so far.
    pub step: u64,
    pub moments: Vec<Moments<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments for every parameter, in registry order.
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = (String, &'a Tensor<T>)>) -> Self {
        let moments = params
            .into_iter()
            .map(|(name, t)| Moments {
                name,
                m: t.zeros_like(),
                v: t.zeros_like(),
            })
            .collect();
        Self {
            config,
            step: 0,
            moments,
        }
    }

    /// One Adam update. `params` and `grads` must list the same names, shapes
    /// and order as the registry this state was created from. Nothing is
    /// modified if validation fails.
    pub fn apply(&mut self, params: &mut [(String, &mut Tensor<T>)], grads: &[(String, &Tensor<T>)]) -> Result<()> {
        if params.len() != self.moments.len() || grads.len() != self.moments.len() {
            return Err(Error::InvalidTensor(format!(
                "optimizer tracks {} parameters, got {} params and {} gradients",
                self.moments.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((mom, (pname, p)), (gname, g)) in self.moments.iter().zip(params.iter()).zip(grads) {
            if &mom.name != pname || pname != gname {
                return Err(Error::InvalidTensor(format!(
                    "parameter order mismatch: `{}` / `{pname}` / `{gname}`",
                    mom.name
                )));
            }
            if p.shape() != g.shape() || p.shape() != mom.m.shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(gname.clone()));
            }
        }

        let cfg = self.config;
        let clip_scale = match cfg.clip_norm {
            Some(limit) => {
                let norm = grads.iter().map(|(_, g)| g.sum_squares()).sum::<f64>().sqrt();
                if norm > limit {
                    limit / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
        let bc1 = T::from_f64(1.0 - cfg.beta1.powi(t));
        let bc2 = T::from_f64(1.0 - cfg.beta2.powi(t));
        let (lr, eps, scale) = (
            T::from_f64(cfg.learning_rate),
            T::from_f64(cfg.epsilon),
            T::from_f64(clip_scale),
        );

        for ((mom, (_, p)), (_, g)) in self.moments.iter_mut().zip(params.iter_mut()).zip(grads) {
            let theta = p.data_mut();
            let (m, v) = (mom.m.data_mut(), mom.v.data_mut());
            for k in 0..theta.len() {
                let gk = g.data()[k] * scale;
                m[k] = b1 * m[k] + one_b1 * gk;
                v[k] = b2 * v[k] + one_b2 * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                theta[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
