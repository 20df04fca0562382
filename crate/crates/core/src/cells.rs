//! Recurrent cell steps (tanh, GRU, LSTM) and their exact adjoints.
//!
//! Every step works on a batch of `n` independent rows at once: `x` is
//! `[n, input_dim]`, hidden state is `[n, d]`. A sweep feeds all columns (or
//! rows) of the patch grid through one step call per time index.
//!
//! Weight matrices are stored `[out, in]`. Gated cells keep their gate blocks
//! stacked along the output axis:
//!
//! * GRU: `w_g`, `u_g`, `b_g` hold `[update; reset]`, update gate first.
//! * LSTM: `w`, `u`, `b` hold `[input; forget; output; candidate]`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::kernels::{add_column_sums, add_row_bias, gemm_nn, gemm_nt, gemm_tn};
use crate::numerics::{sigmoid, Rng, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Tanh,
    Gru,
    Lstm,
}

impl CellKind {
    pub fn name(self) -> &'static str {
        match self {
            CellKind::Tanh => "tanh",
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        }
    }

    /// Number of `d`-row blocks in the input, recurrent and bias parameters.
    pub fn blocks(self) -> usize {
        match self {
            CellKind::Tanh => 1,
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }

    /// Closed-form parameter count of one cell.
    pub fn param_count(self, input_dim: usize, hidden_dim: usize) -> usize {
        self.blocks() * (hidden_dim * input_dim + hidden_dim * hidden_dim + hidden_dim)
    }

    pub const ALL: [CellKind; 3] = [CellKind::Tanh, CellKind::Gru, CellKind::Lstm];
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tanh" => Ok(CellKind::Tanh),
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(Error::Config(format!("unknown cell kind `{other}`"))),
        }
    }
}

/// Weight initialization choices for [`CellParams::init`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitScheme {
    /// Orthogonal `d×d` blocks for recurrent matrices; Glorot-uniform otherwise.
    pub orthogonal_recurrent: bool,
    pub lstm_forget_bias: f64,
}

impl Default for InitScheme {
    fn default() -> Self {
        Self {
            orthogonal_recurrent: true,
            lstm_forget_bias: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TanhParams<T> {
    pub w: Tensor<T>,
    pub u: Tensor<T>,
    pub b: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<T> {
    pub w: Tensor<T>,
    pub u: Tensor<T>,
    pub b: Tensor<T>,
    pub w_g: Tensor<T>,
    pub u_g: Tensor<T>,
    pub b_g: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    pub w: Tensor<T>,
    pub u: Tensor<T>,
    pub b: Tensor<T>,
}

/// Parameters of one recurrent cell (one sweep direction).
#[derive(Debug, Clone, PartialEq)]
pub enum CellParams<T> {
    Tanh(TanhParams<T>),
    Gru(GruParams<T>),
    Lstm(LstmParams<T>),
}

/// Hidden state (and LSTM memory cell) for `n` rows: `[n, d]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState<T> {
    pub h: Tensor<T>,
    pub c: Option<Tensor<T>>,
}

impl<T: Scalar> CellState<T> {
    /// Zero boundary state.
    pub fn zeros(kind: CellKind, rows: usize, hidden_dim: usize) -> Self {
        Self {
            h: Tensor::zeros(&[rows, hidden_dim]),
            c: (kind == CellKind::Lstm).then(|| Tensor::zeros(&[rows, hidden_dim])),
        }
    }
}

/// Forward intermediates of one step, consumed by [`cell_step_backward`].
#[derive(Debug, Clone)]
pub enum StepCache<T> {
    Tanh {
        rows: usize,
        x: Vec<T>,
        h_prev: Vec<T>,
        h: Vec<T>,
    },
    Gru {
        rows: usize,
        x: Vec<T>,
        h_prev: Vec<T>,
        /// `[update; reset]` after the sigmoid, `[n, 2d]`.
        gates: Vec<T>,
        reset_h: Vec<T>,
        candidate: Vec<T>,
        h: Vec<T>,
    },
    Lstm {
        rows: usize,
        x: Vec<T>,
        h_prev: Vec<T>,
        c_prev: Vec<T>,
        /// `[input; forget; output; candidate]` after activation, `[n, 4d]`.
        gates: Vec<T>,
        c: Vec<T>,
        h: Vec<T>,
    },
}

impl<T: Scalar> StepCache<T> {
    pub fn kind(&self) -> CellKind {
        match self {
            StepCache::Tanh { .. } => CellKind::Tanh,
            StepCache::Gru { .. } => CellKind::Gru,
            StepCache::Lstm { .. } => CellKind::Lstm,
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            StepCache::Tanh { rows, .. } | StepCache::Gru { rows, .. } | StepCache::Lstm { rows, .. } => {
                *rows
            }
        }
    }

    pub fn h(&self) -> &[T] {
        match self {
            StepCache::Tanh { h, .. } | StepCache::Gru { h, .. } | StepCache::Lstm { h, .. } => h,
        }
    }

    pub fn c(&self) -> Option<&[T]> {
        match self {
            StepCache::Lstm { c, .. } => Some(c),
            _ => None,
        }
    }

    fn input_len(&self) -> usize {
        match self {
            StepCache::Tanh { x, .. } | StepCache::Gru { x, .. } | StepCache::Lstm { x, .. } => x.len(),
        }
    }
}

/// Gradients flowing out of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGrads<T> {
    pub x: Tensor<T>,
    pub h_prev: Tensor<T>,
    pub c_prev: Option<Tensor<T>>,
}

impl<T: Scalar> CellParams<T> {
    pub fn zeros(kind: CellKind, input_dim: usize, hidden_dim: usize) -> Self {
        let (i, d) = (input_dim, hidden_dim);
        match kind {
            CellKind::Tanh => CellParams::Tanh(TanhParams {
                w: Tensor::zeros(&[d, i]),
                u: Tensor::zeros(&[d, d]),
                b: Tensor::zeros(&[d]),
            }),
            CellKind::Gru => CellParams::Gru(GruParams {
                w: Tensor::zeros(&[d, i]),
                u: Tensor::zeros(&[d, d]),
                b: Tensor::zeros(&[d]),
                w_g: Tensor::zeros(&[2 * d, i]),
                u_g: Tensor::zeros(&[2 * d, d]),
                b_g: Tensor::zeros(&[2 * d]),
            }),
            CellKind::Lstm => CellParams::Lstm(LstmParams {
                w: Tensor::zeros(&[4 * d, i]),
                u: Tensor::zeros(&[4 * d, d]),
                b: Tensor::zeros(&[4 * d]),
            }),
        }
    }

    /// Glorot-uniform input weights, orthogonal recurrent blocks, zero biases
    /// (LSTM forget bias set from `scheme`).
    pub fn init(kind: CellKind, input_dim: usize, hidden_dim: usize, rng: &mut Rng, scheme: InitScheme) -> Self {
        let mut p = Self::zeros(kind, input_dim, hidden_dim);
        let d = hidden_dim;
        for (name, t) in p.tensors_mut() {
            match name {
                "w" | "w_g" => {
                    let s = (6.0 / (input_dim + d) as f64).sqrt();
                    for x in t.data_mut() {
                        *x = T::from_f64(rng.uniform_range(-s, s));
                    }
                }
                "u" | "u_g" => {
                    let blocks = t.shape()[0] / d;
                    for blk in 0..blocks {
                        let block = if scheme.orthogonal_recurrent {
                            orthogonal(d, rng)
                        } else {
                            let s = (3.0 / d as f64).sqrt();
                            (0..d * d).map(|_| rng.uniform_range(-s, s)).collect()
                        };
                        for (dst, v) in t.data_mut()[blk * d * d..(blk + 1) * d * d].iter_mut().zip(block) {
                            *dst = T::from_f64(v);
                        }
                    }
                }
                _ => {}
            }
        }
        if let CellParams::Lstm(l) = &mut p {
            l.b.data_mut()[d..2 * d].fill(T::from_f64(scheme.lstm_forget_bias));
        }
        p
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Tanh(_) => CellKind::Tanh,
            CellParams::Gru(_) => CellKind::Gru,
            CellParams::Lstm(_) => CellKind::Lstm,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_matrix().shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.u_matrix().shape()[1]
    }

    fn w_matrix(&self) -> &Tensor<T> {
        match self {
            CellParams::Tanh(p) => &p.w,
            CellParams::Gru(p) => &p.w,
            CellParams::Lstm(p) => &p.w,
        }
    }

    fn u_matrix(&self) -> &Tensor<T> {
        match self {
            CellParams::Tanh(p) => &p.u,
            CellParams::Gru(p) => &p.u,
            CellParams::Lstm(p) => &p.u,
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            CellParams::Tanh(p) => vec![("w", &p.w), ("u", &p.u), ("b", &p.b)],
            CellParams::Gru(p) => vec![
                ("w", &p.w),
                ("u", &p.u),
                ("b", &p.b),
                ("w_g", &p.w_g),
                ("u_g", &p.u_g),
                ("b_g", &p.b_g),
            ],
            CellParams::Lstm(p) => vec![("w", &p.w), ("u", &p.u), ("b", &p.b)],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            CellParams::Tanh(p) => vec![("w", &mut p.w), ("u", &mut p.u), ("b", &mut p.b)],
            CellParams::Gru(p) => vec![
                ("w", &mut p.w),
                ("u", &mut p.u),
                ("b", &mut p.b),
                ("w_g", &mut p.w_g),
                ("u_g", &mut p.u_g),
                ("b_g", &mut p.b_g),
            ],
            CellParams::Lstm(p) => vec![("w", &mut p.w), ("u", &mut p.u), ("b", &mut p.b)],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.kind(), self.input_dim(), self.hidden_dim())
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// One step for a batch of rows. `x` is `[input_dim]` or `[n, input_dim]`.
    pub fn step(&self, x: &Tensor<T>, state: &CellState<T>) -> Result<(CellState<T>, StepCache<T>)> {
        let rows = self.check_rows(x, &state.h)?;
        let c_prev = match (self.kind(), &state.c) {
            (CellKind::Lstm, Some(c)) => {
                if c.shape() != state.h.shape() {
                    return Err(Error::shape("lstm state", c.shape(), state.h.shape()));
                }
                Some(c.data())
            }
            (CellKind::Lstm, None) => {
                return Err(Error::InvalidTensor("LSTM step needs a memory cell state".into()))
            }
            _ => None,
        };
        let cache = self.forward_rows(rows, x.data(), state.h.data(), c_prev);
        let shape = state.h.shape();
        let next = CellState {
            h: Tensor::new(shape, cache.h().to_vec())?,
            c: cache.c().map(|c| Tensor::new(shape, c.to_vec())).transpose()?,
        };
        Ok((next, cache))
    }

    fn check_rows(&self, x: &Tensor<T>, h: &Tensor<T>) -> Result<usize> {
        let (i, d) = (self.input_dim(), self.hidden_dim());
        let (rows, x_ok, h_ok) = match (x.shape(), h.shape()) {
            (&[xi], &[hd]) => (1, xi == i, hd == d),
            (&[n, xi], &[m, hd]) => (n, xi == i, hd == d && m == n),
            _ => (0, false, false),
        };
        if !x_ok || !h_ok {
            return Err(Error::shape(
                "cell step (x vs h)",
                x.shape(),
                h.shape(),
            ));
        }
        Ok(rows)
    }

    /// Slice-level forward step; shapes are trusted.
    pub(crate) fn forward_rows(&self, rows: usize, x: &[T], h_prev: &[T], c_prev: Option<&[T]>) -> StepCache<T> {
        let (i, d) = (self.input_dim(), self.hidden_dim());
        match self {
            CellParams::Tanh(p) => {
                let mut a = vec![T::zero(); rows * d];
                gemm_nt(rows, i, d, x, p.w.data(), &mut a);
                gemm_nt(rows, d, d, h_prev, p.u.data(), &mut a);
                add_row_bias(&mut a, p.b.data());
                for v in &mut a {
                    *v = v.tanh();
                }
                StepCache::Tanh {
                    rows,
                    x: x.to_vec(),
                    h_prev: h_prev.to_vec(),
                    h: a,
                }
            }
            CellParams::Gru(p) => {
                let mut gates = vec![T::zero(); rows * 2 * d];
                gemm_nt(rows, i, 2 * d, x, p.w_g.data(), &mut gates);
                gemm_nt(rows, d, 2 * d, h_prev, p.u_g.data(), &mut gates);
                add_row_bias(&mut gates, p.b_g.data());
                for v in &mut gates {
                    *v = sigmoid(*v);
                }
                let mut reset_h = vec![T::zero(); rows * d];
                for r in 0..rows {
                    for k in 0..d {
                        reset_h[r * d + k] = gates[r * 2 * d + d + k] * h_prev[r * d + k];
                    }
                }
                let mut cand = vec![T::zero(); rows * d];
                gemm_nt(rows, i, d, x, p.w.data(), &mut cand);
                gemm_nt(rows, d, d, &reset_h, p.u.data(), &mut cand);
                add_row_bias(&mut cand, p.b.data());
                for v in &mut cand {
                    *v = v.tanh();
                }
                let mut h = vec![T::zero(); rows * d];
                for r in 0..rows {
                    for k in 0..d {
                        let u = gates[r * 2 * d + k];
                        h[r * d + k] = (T::one() - u) * h_prev[r * d + k] + u * cand[r * d + k];
                    }
                }
                StepCache::Gru {
                    rows,
                    x: x.to_vec(),
                    h_prev: h_prev.to_vec(),
                    gates,
                    reset_h,
                    candidate: cand,
                    h,
                }
            }
            CellParams::Lstm(p) => {
                let c_prev = c_prev.expect("LSTM forward needs c_prev");
                let mut gates = vec![T::zero(); rows * 4 * d];
                gemm_nt(rows, i, 4 * d, x, p.w.data(), &mut gates);
                gemm_nt(rows, d, 4 * d, h_prev, p.u.data(), &mut gates);
                add_row_bias(&mut gates, p.b.data());
                for row in gates.chunks_exact_mut(4 * d) {
                    for v in &mut row[..3 * d] {
                        *v = sigmoid(*v);
                    }
                    for v in &mut row[3 * d..] {
                        *v = v.tanh();
                    }
                }
                let mut c = vec![T::zero(); rows * d];
                let mut h = vec![T::zero(); rows * d];
                for r in 0..rows {
                    let g = &gates[r * 4 * d..(r + 1) * 4 * d];
                    for k in 0..d {
                        let ct = g[d + k] * c_prev[r * d + k] + g[k] * g[3 * d + k];
                        c[r * d + k] = ct;
                        h[r * d + k] = g[2 * d + k] * ct.tanh();
                    }
                }
                StepCache::Lstm {
                    rows,
                    x: x.to_vec(),
                    h_prev: h_prev.to_vec(),
                    c_prev: c_prev.to_vec(),
                    gates,
                    c,
                    h,
                }
            }
        }
    }

    /// Slice-level adjoint of [`forward_rows`](Self::forward_rows). Parameter
    /// gradients are accumulated into `grads`. Returns `(dx, dh_prev, dc_prev)`.
    pub(crate) fn backward_rows(
        &self,
        cache: &StepCache<T>,
        grad_h: &[T],
        grad_c: Option<&[T]>,
        grads: &mut CellParams<T>,
    ) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
        let (i, d) = (self.input_dim(), self.hidden_dim());
        let one = T::one();
        match (self, cache, grads) {
            (CellParams::Tanh(p), StepCache::Tanh { rows, x, h_prev, h }, CellParams::Tanh(g)) => {
                let n = *rows;
                let ga: Vec<T> = grad_h.iter().zip(h).map(|(&gh, &y)| gh * (one - y * y)).collect();
                gemm_tn(d, n, i, &ga, x, g.w.data_mut());
                gemm_tn(d, n, d, &ga, h_prev, g.u.data_mut());
                add_column_sums(&ga, g.b.data_mut());
                let mut dx = vec![T::zero(); n * i];
                gemm_nn(n, d, i, &ga, p.w.data(), &mut dx);
                let mut dh = vec![T::zero(); n * d];
                gemm_nn(n, d, d, &ga, p.u.data(), &mut dh);
                (dx, dh, None)
            }
            (
                CellParams::Gru(p),
                StepCache::Gru {
                    rows,
                    x,
                    h_prev,
                    gates,
                    reset_h,
                    candidate,
                    ..
                },
                CellParams::Gru(g),
            ) => {
                let n = *rows;
                let mut dh = vec![T::zero(); n * d];
                let mut ga_c = vec![T::zero(); n * d];
                let mut ga_g = vec![T::zero(); n * 2 * d];
                for r in 0..n {
                    for k in 0..d {
                        let idx = r * d + k;
                        let u = gates[r * 2 * d + k];
                        let gh = grad_h[idx];
                        let cand = candidate[idx];
                        ga_c[idx] = gh * u * (one - cand * cand);
                        dh[idx] = gh * (one - u);
                        ga_g[r * 2 * d + k] = gh * (cand - h_prev[idx]) * u * (one - u);
                    }
                }
                gemm_tn(d, n, i, &ga_c, x, g.w.data_mut());
                gemm_tn(d, n, d, &ga_c, reset_h, g.u.data_mut());
                add_column_sums(&ga_c, g.b.data_mut());
                let mut dx = vec![T::zero(); n * i];
                gemm_nn(n, d, i, &ga_c, p.w.data(), &mut dx);
                let mut d_reset_h = vec![T::zero(); n * d];
                gemm_nn(n, d, d, &ga_c, p.u.data(), &mut d_reset_h);
                for r in 0..n {
                    for k in 0..d {
                        let idx = r * d + k;
                        let rg = gates[r * 2 * d + d + k];
                        dh[idx] += d_reset_h[idx] * rg;
                        ga_g[r * 2 * d + d + k] = d_reset_h[idx] * h_prev[idx] * rg * (one - rg);
                    }
                }
                gemm_tn(2 * d, n, i, &ga_g, x, g.w_g.data_mut());
                gemm_tn(2 * d, n, d, &ga_g, h_prev, g.u_g.data_mut());
                add_column_sums(&ga_g, g.b_g.data_mut());
                gemm_nn(n, 2 * d, i, &ga_g, p.w_g.data(), &mut dx);
                gemm_nn(n, 2 * d, d, &ga_g, p.u_g.data(), &mut dh);
                (dx, dh, None)
            }
            (
                CellParams::Lstm(p),
                StepCache::Lstm {
                    rows,
                    x,
                    h_prev,
                    c_prev,
                    gates,
                    c,
                    ..
                },
                CellParams::Lstm(g),
            ) => {
                let n = *rows;
                let mut ga = vec![T::zero(); n * 4 * d];
                let mut dc_prev = vec![T::zero(); n * d];
                for r in 0..n {
                    let gr = &gates[r * 4 * d..(r + 1) * 4 * d];
                    let gar = &mut ga[r * 4 * d..(r + 1) * 4 * d];
                    for k in 0..d {
                        let idx = r * d + k;
                        let (ig, fg, og, cg) = (gr[k], gr[d + k], gr[2 * d + k], gr[3 * d + k]);
                        let tc = c[idx].tanh();
                        let gh = grad_h[idx];
                        let gct = grad_c.map_or(T::zero(), |gc| gc[idx]) + gh * og * (one - tc * tc);
                        gar[k] = gct * cg * ig * (one - ig);
                        gar[d + k] = gct * c_prev[idx] * fg * (one - fg);
                        gar[2 * d + k] = gh * tc * og * (one - og);
                        gar[3 * d + k] = gct * ig * (one - cg * cg);
                        dc_prev[idx] = gct * fg;
                    }
                }
                gemm_tn(4 * d, n, i, &ga, x, g.w.data_mut());
                gemm_tn(4 * d, n, d, &ga, h_prev, g.u.data_mut());
                add_column_sums(&ga, g.b.data_mut());
                let mut dx = vec![T::zero(); n * i];
                gemm_nn(n, 4 * d, i, &ga, p.w.data(), &mut dx);
                let mut dh = vec![T::zero(); n * d];
                gemm_nn(n, 4 * d, d, &ga, p.u.data(), &mut dh);
                (dx, dh, Some(dc_prev))
            }
            _ => unreachable!("kind mismatch is checked by callers"),
        }
    }

    fn compatible(&self, other: &CellParams<T>) -> bool {
        self.kind() == other.kind()
            && self.input_dim() == other.input_dim()
            && self.hidden_dim() == other.hidden_dim()
    }
}

fn orthogonal(d: usize, rng: &mut Rng) -> Vec<f64> {
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.normal());
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for k in 0..d {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    let mut out = Vec::with_capacity(d * d);
    for row in 0..d {
        for col in 0..d {
            out.push(q[(row, col)]);
        }
    }
    out
}

/// `h_t = tanh(W x_t + U h_{t-1} + b)`
pub fn tanh_step<T: Scalar>(params: &TanhParams<T>, x: &Tensor<T>, h_prev: &Tensor<T>) -> Result<Tensor<T>> {
    let cell = CellParams::Tanh(params.clone());
    let (next, _) = cell.step(x, &unbatched(h_prev))?;
    reshape_like(next.h, h_prev)
}

/// GRU step: gates, then candidate, then interpolation.
pub fn gru_step<T: Scalar>(params: &GruParams<T>, x: &Tensor<T>, h_prev: &Tensor<T>) -> Result<Tensor<T>> {
    let cell = CellParams::Gru(params.clone());
    let (next, _) = cell.step(x, &unbatched(h_prev))?;
    reshape_like(next.h, h_prev)
}

/// LSTM step with forget gate and no peepholes.
pub fn lstm_step<T: Scalar>(params: &LstmParams<T>, x: &Tensor<T>, state: &CellState<T>) -> Result<CellState<T>> {
    let cell = CellParams::Lstm(params.clone());
    let (next, _) = cell.step(x, state)?;
    Ok(next)
}

fn unbatched<T: Scalar>(h: &Tensor<T>) -> CellState<T> {
    CellState { h: h.clone(), c: None }
}

fn reshape_like<T: Scalar>(t: Tensor<T>, like: &Tensor<T>) -> Result<Tensor<T>> {
    t.reshape(like.shape())
}

/// Adjoint of one step. Parameter gradients are added into `grads`; the
/// returned gradients are for the step's input and previous state.
pub fn cell_step_backward<T: Scalar>(
    params: &CellParams<T>,
    cache: &StepCache<T>,
    grad_h: &Tensor<T>,
    grad_c: Option<&Tensor<T>>,
    grads: &mut CellParams<T>,
) -> Result<StepGrads<T>> {
    let (i, d, n) = (params.input_dim(), params.hidden_dim(), cache.rows());
    if cache.kind() != params.kind() || !params.compatible(grads) || cache.input_len() != n * i {
        return Err(Error::InvalidTensor(format!(
            "step cache ({} cell, {} rows) does not match {} parameters [{i}->{d}]",
            cache.kind(),
            n,
            params.kind()
        )));
    }
    if grad_h.len() != n * d {
        return Err(Error::shape("cell_step_backward grad_h", grad_h.shape(), &[n, d]));
    }
    if let Some(gc) = grad_c {
        if gc.len() != n * d {
            return Err(Error::shape("cell_step_backward grad_c", gc.shape(), &[n, d]));
        }
    }
    let (dx, dh, dc) = params.backward_rows(cache, grad_h.data(), grad_c.map(|t| t.data()), grads);
    let batched = grad_h.rank() == 2;
    let shape_x: Vec<usize> = if batched { vec![n, i] } else { vec![i] };
    Ok(StepGrads {
        x: Tensor::new(&shape_x, dx)?,
        h_prev: Tensor::new(grad_h.shape(), dh)?,
        c_prev: dc.map(|c| Tensor::new(grad_h.shape(), c)).transpose()?,
    })
}
