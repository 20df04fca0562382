//! Fully-connected head on top of the last ReNet feature map, plus the softmax
//! negative log-likelihood.

use crate::error::{Error, Result};
use crate::numerics::kernels::{add_row_bias, gemm_nn, gemm_nt, gemm_tn};
use crate::numerics::{Activation, Rng, Scalar, Tensor};

/// Row-major flatten over `(i, j, feature)`.
pub fn flatten<T: Scalar>(h: &Tensor<T>) -> Tensor<T> {
    h.clone().reshape(&[h.len()]).expect("flatten preserves length")
}

pub fn unflatten<T: Scalar>(v: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    v.clone().reshape(shape)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcParams<T> {
    /// `[out, in]`
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub activation: Activation,
}

impl<T: Scalar> FcParams<T> {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weights: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
            activation,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(input: usize, output: usize, activation: Activation, rng: &mut Rng) -> Self {
        let s = (6.0 / (input + output) as f64).sqrt();
        let mut p = Self::zeros(input, output, activation);
        for w in p.weights.data_mut() {
            *w = T::from_f64(rng.uniform_range(-s, s));
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.output_dim(), self.activation)
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("weight", &self.weights), ("bias", &self.bias)]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![("weight", &mut self.weights), ("bias", &mut self.bias)]
    }
}

/// `activation(W x + b)`
pub fn fc_forward<T: Scalar>(x: &Tensor<T>, params: &FcParams<T>) -> Result<Tensor<T>> {
    if x.rank() != 1 || x.len() != params.input_dim() {
        return Err(Error::shape("fc_forward", x.shape(), params.weights.shape()));
    }
    let out = params.output_dim();
    let mut y = vec![T::zero(); out];
    gemm_nt(1, params.input_dim(), out, x.data(), params.weights.data(), &mut y);
    add_row_bias(&mut y, params.bias.data());
    for v in &mut y {
        *v = params.activation.apply(*v);
    }
    Tensor::new(&[out], y)
}

/// Adjoint of [`fc_forward`] given its input `x` and output `y`.
pub fn fc_backward<T: Scalar>(
    params: &FcParams<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    grad_y: &Tensor<T>,
    grads: &mut FcParams<T>,
) -> Result<Tensor<T>> {
    let (i, o) = (params.input_dim(), params.output_dim());
    if x.len() != i || y.len() != o || grad_y.len() != o || grads.weights.shape() != params.weights.shape() {
        return Err(Error::shape("fc_backward", grad_y.shape(), params.weights.shape()));
    }
    let ga: Vec<T> = grad_y
        .data()
        .iter()
        .zip(y.data())
        .map(|(&g, &yv)| g * params.activation.derivative_from_output(yv))
        .collect();
    gemm_tn(o, 1, i, &ga, x.data(), grads.weights.data_mut());
    for (b, &g) in grads.bias.data_mut().iter_mut().zip(&ga) {
        *b += g;
    }
    let mut gx = vec![T::zero(); i];
    gemm_nn(1, o, i, &ga, params.weights.data(), &mut gx);
    Tensor::new(&[i], gx)
}

/// Softmax probabilities, accumulated in f64 with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Vec<f64> {
    let max = logits.data().iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data().iter().map(|v| (v.as_f64() - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-log softmax(logits)[label]` and its gradient `softmax - onehot(label)`.
pub fn softmax_nll<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<(f64, Tensor<T>)> {
    let k = logits.len();
    if label >= k {
        return Err(Error::Label { label, classes: k });
    }
    let max = logits.data().iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.data().iter().map(|v| v.as_f64() - max).collect();
    let log_total = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    let loss = log_total - shifted[label];
    let grad = shifted
        .iter()
        .enumerate()
        .map(|(c, s)| {
            let p = (s - log_total).exp();
            T::from_f64(if c == label { p - 1.0 } else { p })
        })
        .collect();
    Ok((loss, Tensor::new(logits.shape(), grad)?))
}

/// Index of the largest logit; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(logits: &Tensor<T>) -> usize {
    let mut best = 0;
    for (i, v) in logits.data().iter().enumerate() {
        if *v > logits.data()[best] {
            best = i;
        }
    }
    best
}
