//! One ReNet layer: tile the input into non-overlapping patches, sweep each
//! column of the patch grid with two recurrent cells (top-down and bottom-up),
//! concatenate both hidden states into `V`, then sweep each row of `V` with two
//! more cells (left-right and right-left) to produce `H`.
//!
//! Grid conventions: `i` indexes the horizontal axis (`0..I`) and `j` the
//! vertical axis (`0..J`). Patch maps and feature maps are stored
//! `[I, J, features]`. A patch is flattened row-major over `(h_p, w_p, c)`.
//! Every sweep starts from a zero hidden (and memory) state.

use crate::cells::{CellKind, CellParams, InitScheme, StepCache};
use crate::error::{Error, Result};
use crate::numerics::{concat_last, split_last, Rng, Scalar, Tensor};

/// Geometry of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReNetLayerConfig {
    /// Input `(w, h, c)`.
    pub input: (usize, usize, usize),
    pub patch_w: usize,
    pub patch_h: usize,
    /// Recurrent units per direction (`d`).
    pub hidden: usize,
    pub cell: CellKind,
}

impl ReNetLayerConfig {
    pub fn new(input: (usize, usize, usize), patch: (usize, usize), hidden: usize, cell: CellKind) -> Result<Self> {
        let cfg = Self {
            input,
            patch_w: patch.0,
            patch_h: patch.1,
            hidden,
            cell,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Non-divisible inputs are rejected rather than padded.
    pub fn validate(&self) -> Result<()> {
        let (w, h, c) = self.input;
        if w == 0 || h == 0 || c == 0 || self.patch_w == 0 || self.patch_h == 0 || self.hidden == 0 {
            return Err(Error::Geometry(format!("all extents must be positive: {self:?}")));
        }
        if w % self.patch_w != 0 {
            return Err(Error::Geometry(format!(
                "width {w} is not divisible by patch width {}",
                self.patch_w
            )));
        }
        if h % self.patch_h != 0 {
            return Err(Error::Geometry(format!(
                "height {h} is not divisible by patch height {}",
                self.patch_h
            )));
        }
        Ok(())
    }

    /// `(I, J)`: number of patches along the horizontal and vertical axes.
    pub fn grid(&self) -> (usize, usize) {
        (self.input.0 / self.patch_w, self.input.1 / self.patch_h)
    }

    pub fn patch_len(&self) -> usize {
        self.patch_w * self.patch_h * self.input.2
    }

    /// `[I, J, 2d]`
    pub fn output_shape(&self) -> [usize; 3] {
        let (i, j) = self.grid();
        [i, j, 2 * self.hidden]
    }

    pub fn param_count(&self) -> usize {
        2 * self.cell.param_count(self.patch_len(), self.hidden) + 2 * self.cell.param_count(2 * self.hidden, self.hidden)
    }
}

/// The four cells of a layer. Vertical cells read patches, horizontal cells
/// read `V`; no parameters are shared between them.
#[derive(Debug, Clone, PartialEq)]
pub struct ReNetLayerParams<T> {
    pub vfwd: CellParams<T>,
    pub vrev: CellParams<T>,
    pub hfwd: CellParams<T>,
    pub hrev: CellParams<T>,
}

pub const DIRECTIONS: [&str; 4] = ["vfwd", "vrev", "hfwd", "hrev"];

impl<T: Scalar> ReNetLayerParams<T> {
    pub fn zeros(cfg: &ReNetLayerConfig) -> Self {
        let (l, d) = (cfg.patch_len(), cfg.hidden);
        Self {
            vfwd: CellParams::zeros(cfg.cell, l, d),
            vrev: CellParams::zeros(cfg.cell, l, d),
            hfwd: CellParams::zeros(cfg.cell, 2 * d, d),
            hrev: CellParams::zeros(cfg.cell, 2 * d, d),
        }
    }

    pub fn init(cfg: &ReNetLayerConfig, rng: &mut Rng, scheme: InitScheme) -> Self {
        let (l, d) = (cfg.patch_len(), cfg.hidden);
        Self {
            vfwd: CellParams::init(cfg.cell, l, d, rng, scheme),
            vrev: CellParams::init(cfg.cell, l, d, rng, scheme),
            hfwd: CellParams::init(cfg.cell, 2 * d, d, rng, scheme),
            hrev: CellParams::init(cfg.cell, 2 * d, d, rng, scheme),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            vfwd: self.vfwd.zeros_like(),
            vrev: self.vrev.zeros_like(),
            hfwd: self.hfwd.zeros_like(),
            hrev: self.hrev.zeros_like(),
        }
    }

    pub fn cells(&self) -> [&CellParams<T>; 4] {
        [&self.vfwd, &self.vrev, &self.hfwd, &self.hrev]
    }

    pub fn cells_mut(&mut self) -> [&mut CellParams<T>; 4] {
        [&mut self.vfwd, &mut self.vrev, &mut self.hfwd, &mut self.hrev]
    }

    /// `(direction.matrix, tensor)` pairs in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        DIRECTIONS
            .iter()
            .zip(self.cells())
            .flat_map(|(dir, cell)| cell.tensors().into_iter().map(move |(n, t)| (format!("{dir}.{n}"), t)))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        DIRECTIONS
            .iter()
            .zip(self.cells_mut())
            .flat_map(|(dir, cell)| cell.tensors_mut().into_iter().map(move |(n, t)| (format!("{dir}.{n}"), t)))
            .collect()
    }

    fn matches(&self, cfg: &ReNetLayerConfig) -> bool {
        let (l, d) = (cfg.patch_len(), cfg.hidden);
        self.cells().iter().all(|c| c.kind() == cfg.cell && c.hidden_dim() == d)
            && self.vfwd.input_dim() == l
            && self.vrev.input_dim() == l
            && self.hfwd.input_dim() == 2 * d
            && self.hrev.input_dim() == 2 * d
    }
}

/// Forward intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ReNetLayerState<T> {
    pub cfg: ReNetLayerConfig,
    /// `[I, J, w_p·h_p·c]`
    pub patches: Tensor<T>,
    /// Composite vertical map `[I, J, 2d]`, before any dropout.
    pub v: Tensor<T>,
    /// Inverted-dropout multipliers applied to `V` (0 or 1/keep), if any.
    pub v_mask: Option<Vec<T>>,
    /// Layer output `[I, J, 2d]`.
    pub h: Tensor<T>,
    steps: [Vec<StepCache<T>>; 4],
}

/// Splits `x[w, h, c]` into the `[I, J, w_p·h_p·c]` patch map.
pub fn split_patches<T: Scalar>(x: &Tensor<T>, cfg: &ReNetLayerConfig) -> Result<Tensor<T>> {
    cfg.validate()?;
    let (w, h, c) = cfg.input;
    if x.shape() != [w, h, c] {
        return Err(Error::shape("split_patches", x.shape(), &[w, h, c]));
    }
    let (gi, gj) = cfg.grid();
    let (pw, ph) = (cfg.patch_w, cfg.patch_h);
    let l = cfg.patch_len();
    let src = x.data();
    let mut out = vec![T::zero(); gi * gj * l];
    for i in 0..gi {
        for j in 0..gj {
            let base = (i * gj + j) * l;
            for dy in 0..ph {
                for dx in 0..pw {
                    let (px, py) = (i * pw + dx, j * ph + dy);
                    let s = (px * h + py) * c;
                    let o = base + (dy * pw + dx) * c;
                    out[o..o + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
    }
    Tensor::new(&[gi, gj, l], out)
}

/// Inverse of [`split_patches`].
pub fn merge_patches<T: Scalar>(p: &Tensor<T>, cfg: &ReNetLayerConfig) -> Result<Tensor<T>> {
    let (gi, gj) = cfg.grid();
    let l = cfg.patch_len();
    if p.shape() != [gi, gj, l] {
        return Err(Error::shape("merge_patches", p.shape(), &[gi, gj, l]));
    }
    let (w, h, c) = cfg.input;
    let (pw, ph) = (cfg.patch_w, cfg.patch_h);
    let src = p.data();
    let mut out = vec![T::zero(); w * h * c];
    for i in 0..gi {
        for j in 0..gj {
            let base = (i * gj + j) * l;
            for dy in 0..ph {
                for dx in 0..pw {
                    let (px, py) = (i * pw + dx, j * ph + dy);
                    let o = (px * h + py) * c;
                    let s = base + (dy * pw + dx) * c;
                    out[o..o + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
    }
    Tensor::new(&[w, h, c], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    /// One sequence per column `i`, time runs over `j`.
    Vertical,
    /// One sequence per row `j`, time runs over `i`.
    Horizontal,
}

#[derive(Debug, Clone, Copy)]
struct Grid {
    i: usize,
    j: usize,
    axis: Axis,
}

impl Grid {
    /// `(sequences, length)`
    fn layout(self) -> (usize, usize) {
        match self.axis {
            Axis::Vertical => (self.i, self.j),
            Axis::Horizontal => (self.j, self.i),
        }
    }

    /// Flat grid index of sequence `s` at time `t`.
    #[inline]
    fn loc(self, s: usize, t: usize) -> usize {
        match self.axis {
            Axis::Vertical => s * self.j + t,
            Axis::Horizontal => t * self.j + s,
        }
    }
}

/// Runs one direction over every sequence of the grid, all sequences batched
/// into the rows of each step.
fn run_direction<T: Scalar>(
    cell: &CellParams<T>,
    input: &[T],
    feat: usize,
    grid: Grid,
    reverse: bool,
) -> (Vec<T>, Vec<StepCache<T>>) {
    let d = cell.hidden_dim();
    let (n, len) = grid.layout();
    let mut out = vec![T::zero(); grid.i * grid.j * d];
    let mut h = vec![T::zero(); n * d];
    let mut c = (cell.kind() == CellKind::Lstm).then(|| vec![T::zero(); n * d]);
    let mut x = vec![T::zero(); n * feat];
    let mut caches = Vec::with_capacity(len);
    for step in 0..len {
        let t = if reverse { len - 1 - step } else { step };
        for s in 0..n {
            let at = grid.loc(s, t) * feat;
            x[s * feat..(s + 1) * feat].copy_from_slice(&input[at..at + feat]);
        }
        let cache = cell.forward_rows(n, &x, &h, c.as_deref());
        h.copy_from_slice(cache.h());
        if let (Some(c), Some(cc)) = (c.as_mut(), cache.c()) {
            c.copy_from_slice(cc);
        }
        for s in 0..n {
            let at = grid.loc(s, t) * d;
            out[at..at + d].copy_from_slice(&h[s * d..(s + 1) * d]);
        }
        caches.push(cache);
    }
    (out, caches)
}

/// Backpropagation through time for one direction. Returns the gradient with
/// respect to that direction's input map.
fn backprop_direction<T: Scalar>(
    cell: &CellParams<T>,
    caches: &[StepCache<T>],
    grad_out: &[T],
    feat: usize,
    grid: Grid,
    reverse: bool,
    grads: &mut CellParams<T>,
) -> Vec<T> {
    let d = cell.hidden_dim();
    let (n, len) = grid.layout();
    let mut grad_in = vec![T::zero(); grid.i * grid.j * feat];
    let mut carry_h = vec![T::zero(); n * d];
    let mut carry_c: Option<Vec<T>> = None;
    for (step, cache) in caches.iter().enumerate().rev() {
        let t = if reverse { len - 1 - step } else { step };
        for s in 0..n {
            let at = grid.loc(s, t) * d;
            for k in 0..d {
                carry_h[s * d + k] += grad_out[at + k];
            }
        }
        let (dx, dh, dc) = cell.backward_rows(cache, &carry_h, carry_c.as_deref(), grads);
        for s in 0..n {
            let at = grid.loc(s, t) * feat;
            for (g, &v) in grad_in[at..at + feat].iter_mut().zip(&dx[s * feat..(s + 1) * feat]) {
                *g += v;
            }
        }
        carry_h = dh;
        carry_c = dc;
    }
    grad_in
}

fn check_sweep<T: Scalar>(input: &Tensor<T>, fwd: &CellParams<T>, rev: &CellParams<T>) -> Result<(usize, usize, usize)> {
    let &[i, j, f] = input.shape() else {
        return Err(Error::InvalidTensor(format!(
            "sweep input must be [I, J, features], got {:?}",
            input.shape()
        )));
    };
    for cell in [fwd, rev] {
        if cell.input_dim() != f {
            return Err(Error::shape("sweep (input features vs cell)", input.shape(), &[cell.input_dim()]));
        }
    }
    if fwd.hidden_dim() != rev.hidden_dim() {
        return Err(Error::shape("sweep (fwd vs rev hidden)", &[fwd.hidden_dim()], &[rev.hidden_dim()]));
    }
    Ok((i, j, f))
}

type SweepOut<T> = (Tensor<T>, Vec<StepCache<T>>, Vec<StepCache<T>>);

fn sweep<T: Scalar>(input: &Tensor<T>, fwd: &CellParams<T>, rev: &CellParams<T>, axis: Axis) -> Result<SweepOut<T>> {
    let (i, j, f) = check_sweep(input, fwd, rev)?;
    let grid = Grid { i, j, axis };
    let d = fwd.hidden_dim();
    let ((out_f, cache_f), (out_r, cache_r)) = rayon::join(
        || run_direction(fwd, input.data(), f, grid, false),
        || run_direction(rev, input.data(), f, grid, true),
    );
    let v = concat_last(&Tensor::new(&[i, j, d], out_f)?, &Tensor::new(&[i, j, d], out_r)?)?;
    Ok((v, cache_f, cache_r))
}

/// Column-wise bidirectional sweep over a patch map: `[I, J, L] -> [I, J, 2d]`.
/// Forward-direction features come first at each location.
pub fn vertical_sweep<T: Scalar>(patches: &Tensor<T>, fwd: &CellParams<T>, rev: &CellParams<T>) -> Result<Tensor<T>> {
    sweep(patches, fwd, rev, Axis::Vertical).map(|(v, _, _)| v)
}

/// Row-wise bidirectional sweep over a feature map: `[I, J, F] -> [I, J, 2d]`.
pub fn horizontal_sweep<T: Scalar>(v: &Tensor<T>, fwd: &CellParams<T>, rev: &CellParams<T>) -> Result<Tensor<T>> {
    sweep(v, fwd, rev, Axis::Horizontal).map(|(h, _, _)| h)
}

/// Optional inverted dropout applied to `V` between the two sweeps.
pub struct SweepDropout<'a> {
    pub rate: f64,
    pub rng: &'a mut Rng,
}

/// Inverted-dropout multipliers: `1/keep` with probability `keep`, else 0.
pub fn dropout_mask<T: Scalar>(len: usize, rate: f64, rng: &mut Rng) -> Vec<T> {
    let keep = 1.0 - rate;
    let scale = T::from_f64(1.0 / keep);
    (0..len)
        .map(|_| if rng.bernoulli(keep) { scale } else { T::zero() })
        .collect()
}

/// Full layer map `X[w, h, c] -> H[I, J, 2d]`.
pub fn layer_forward<T: Scalar>(
    x: &Tensor<T>,
    cfg: &ReNetLayerConfig,
    params: &ReNetLayerParams<T>,
    v_dropout: Option<SweepDropout<'_>>,
) -> Result<(Tensor<T>, ReNetLayerState<T>)> {
    if !params.matches(cfg) {
        return Err(Error::Geometry(format!("layer parameters do not match config {cfg:?}")));
    }
    let patches = split_patches(x, cfg)?;
    let (v, vf, vr) = sweep(&patches, &params.vfwd, &params.vrev, Axis::Vertical)?;
    let v_mask = match v_dropout {
        Some(SweepDropout { rate, rng }) if rate > 0.0 => Some(dropout_mask::<T>(v.len(), rate, rng)),
        _ => None,
    };
    let h_input = match &v_mask {
        Some(mask) => {
            let mut dropped = v.clone();
            for (a, &m) in dropped.data_mut().iter_mut().zip(mask) {
                *a *= m;
            }
            dropped
        }
        None => v.clone(),
    };
    let (h, hf, hr) = sweep(&h_input, &params.hfwd, &params.hrev, Axis::Horizontal)?;
    let state = ReNetLayerState {
        cfg: *cfg,
        patches,
        v,
        v_mask,
        h: h.clone(),
        steps: [vf, vr, hf, hr],
    };
    Ok((h, state))
}

/// Exact adjoint of [`layer_forward`]. Parameter gradients are accumulated
/// into `grads`; the gradient with respect to the layer input is returned.
///
/// The state must come from a forward call with the same `params`; the check
/// here is structural (kinds, extents, step counts).
pub fn layer_backward<T: Scalar>(
    params: &ReNetLayerParams<T>,
    state: &ReNetLayerState<T>,
    grad_h: &Tensor<T>,
    grads: &mut ReNetLayerParams<T>,
) -> Result<Tensor<T>> {
    let cfg = &state.cfg;
    let (gi, gj) = cfg.grid();
    let d = cfg.hidden;
    let lens = [gj, gj, gi, gi];
    let stale = !params.matches(cfg)
        || !grads.matches(cfg)
        || state.steps.iter().zip(lens).any(|(s, len)| s.len() != len);
    if stale {
        return Err(Error::Geometry("layer state does not match parameters or gradients".into()));
    }
    if grad_h.shape() != state.h.shape() {
        return Err(Error::shape("layer_backward", grad_h.shape(), state.h.shape()));
    }
    let ReNetLayerParams { vfwd, vrev, hfwd, hrev } = grads;
    let [s_vf, s_vr, s_hf, s_hr] = &state.steps;

    let (gh_f, gh_r) = split_last(grad_h, d)?;
    let hgrid = Grid { i: gi, j: gj, axis: Axis::Horizontal };
    let (mut grad_v, grad_v_r) = rayon::join(
        || backprop_direction(&params.hfwd, s_hf, gh_f.data(), 2 * d, hgrid, false, hfwd),
        || backprop_direction(&params.hrev, s_hr, gh_r.data(), 2 * d, hgrid, true, hrev),
    );
    for (a, b) in grad_v.iter_mut().zip(grad_v_r) {
        *a += b;
    }
    if let Some(mask) = &state.v_mask {
        for (g, &m) in grad_v.iter_mut().zip(mask) {
            *g *= m;
        }
    }

    let (gv_f, gv_r) = split_last(&Tensor::new(&[gi, gj, 2 * d], grad_v)?, d)?;
    let l = cfg.patch_len();
    let vgrid = Grid { i: gi, j: gj, axis: Axis::Vertical };
    let (mut grad_p, grad_p_r) = rayon::join(
        || backprop_direction(&params.vfwd, s_vf, gv_f.data(), l, vgrid, false, vfwd),
        || backprop_direction(&params.vrev, s_vr, gv_r.data(), l, vgrid, true, vrev),
    );
    for (a, b) in grad_p.iter_mut().zip(grad_p_r) {
        *a += b;
    }
    merge_patches(&Tensor::new(&[gi, gj, l], grad_p)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numerics::Rng;

    fn random_params(cfg: &ReNetLayerConfig, seed: u64) -> ReNetLayerParams<f64> {
        let mut rng = Rng::new(seed);
        let mut p = ReNetLayerParams::zeros(cfg);
        for (_, t) in p.tensors_mut() {
            for x in t.data_mut() {
                *x = rng.uniform_range(-0.8, 0.8);
            }
        }
        p
    }

    fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0))
    }

    #[test]
    fn mnist_geometry_tiles_into_14_by_14() {
        let cfg = ReNetLayerConfig::new((28, 28, 1), (2, 2), 4, CellKind::Gru).unwrap();
        let p = split_patches(&Tensor::<f64>::zeros(&[28, 28, 1]), &cfg).unwrap();
        assert_eq!(p.shape(), &[14, 14, 4]);
    }

    #[test]
    fn whole_image_patch() {
        let cfg = ReNetLayerConfig::new((3, 5, 2), (3, 5), 1, CellKind::Tanh).unwrap();
        let x = Tensor::<f64>::from_fn(&[3, 5, 2], |k| k as f64);
        assert_eq!(split_patches(&x, &cfg).unwrap().shape(), &[1, 1, 30]);
    }

    #[test]
    fn patches_of_a_counting_image() {
        // Pixel at (x, y) holds 4y + x, i.e. the values 0..15 in reading order.
        let cfg = ReNetLayerConfig::new((4, 4, 1), (2, 2), 1, CellKind::Tanh).unwrap();
        let x = Tensor::<f64>::from_fn(&[4, 4, 1], |k| {
            let (px, py) = (k / 4, k % 4);
            (4 * py + px) as f64
        });
        let p = split_patches(&x, &cfg).unwrap();
        assert_eq!(&p.data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        // p_{1,0} is the top-right patch.
        assert_eq!(&p.data()[2 * 4..3 * 4], &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(merge_patches(&p, &cfg).unwrap(), x);
    }

    #[test]
    fn non_divisible_geometry_names_the_axis() {
        let err = ReNetLayerConfig::new((28, 27, 1), (2, 2), 4, CellKind::Gru).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
        let err = ReNetLayerConfig::new((5, 4, 1), (2, 2), 4, CellKind::Gru).unwrap_err();
        assert!(err.to_string().contains("width"), "{err}");
    }

    #[test]
    fn zero_cells_give_zero_maps() {
        let cfg = ReNetLayerConfig::new((6, 4, 2), (2, 2), 3, CellKind::Lstm).unwrap();
        let params = ReNetLayerParams::<f64>::zeros(&cfg);
        let (h, state) = layer_forward(&random_input(&[6, 4, 2], 1), &cfg, &params, None).unwrap();
        assert!(state.v.data().iter().all(|&v| v == 0.0));
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_sequences_ignore_direction() {
        let cfg = ReNetLayerConfig::new((6, 2, 1), (2, 2), 3, CellKind::Gru).unwrap();
        let p = random_params(&cfg, 3);
        let patches = split_patches(&random_input(&[6, 2, 1], 2), &cfg).unwrap();
        let v = vertical_sweep(&patches, &p.vfwd, &p.vfwd).unwrap();
        for loc in v.data().chunks(6) {
            assert_eq!(loc[..3], loc[3..]);
        }
        let cfg = ReNetLayerConfig::new((2, 6, 1), (2, 2), 3, CellKind::Gru).unwrap();
        let feat = random_input(&[1, 3, 6], 4);
        let h = horizontal_sweep(&feat, &p.hfwd, &p.hfwd).unwrap();
        assert_eq!(cfg.grid(), (1, 3));
        for loc in h.data().chunks(6) {
            assert_eq!(loc[..3], loc[3..]);
        }
    }

    #[test]
    fn horizontal_is_vertical_on_the_transposed_map() {
        let cfg = ReNetLayerConfig::new((8, 6, 1), (2, 2), 3, CellKind::Lstm).unwrap();
        let p = random_params(&cfg, 11);
        let v = random_input(&[4, 3, 6], 5);
        let direct = horizontal_sweep(&v, &p.hfwd, &p.hrev).unwrap();
        let via = vertical_sweep(&v.swap_leading().unwrap(), &p.hfwd, &p.hrev)
            .unwrap()
            .swap_leading()
            .unwrap();
        assert_eq!(direct, via);
    }

    #[test]
    fn published_layer_shapes() {
        let mnist = ReNetLayerConfig::new((28, 28, 1), (2, 2), 256, CellKind::Gru).unwrap();
        let (h, _) = layer_forward(
            &Tensor::<f32>::zeros(&[28, 28, 1]),
            &mnist,
            &ReNetLayerParams::zeros(&mnist),
            None,
        )
        .unwrap();
        assert_eq!(h.shape(), &[14, 14, 512]);
        let second = ReNetLayerConfig::new((14, 14, 512), (2, 2), 256, CellKind::Gru).unwrap();
        assert_eq!(second.output_shape(), [7, 7, 512]);
        let cifar = ReNetLayerConfig::new((32, 32, 3), (2, 2), 320, CellKind::Gru).unwrap();
        let (h, _) = layer_forward(
            &Tensor::<f32>::zeros(&[32, 32, 3]),
            &cifar,
            &ReNetLayerParams::zeros(&cifar),
            None,
        )
        .unwrap();
        assert_eq!(h.shape(), &[16, 16, 640]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let cfg = ReNetLayerConfig::new((4, 4, 2), (2, 2), 2, CellKind::Gru).unwrap();
        let p = random_params(&cfg, 8);
        let (h, state) = layer_forward(&random_input(&[4, 4, 2], 9), &cfg, &p, None).unwrap();
        let mut grads = p.zeros_like();
        let gx = layer_backward(&p, &state, &h.zeros_like(), &mut grads).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(grads.tensors().iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let cfg = ReNetLayerConfig::new((4, 4, 1), (2, 2), 2, CellKind::Gru).unwrap();
        let p = random_params(&cfg, 1);
        let (h, state) = layer_forward(&random_input(&[4, 4, 1], 2), &cfg, &p, None).unwrap();
        let other = ReNetLayerConfig::new((4, 4, 1), (2, 2), 3, CellKind::Gru).unwrap();
        let q = random_params(&other, 1);
        let mut g = q.zeros_like();
        assert!(layer_backward(&q, &state, &h, &mut g).is_err());
        let mut g = p.zeros_like();
        assert!(layer_backward(&p, &state, &Tensor::zeros(&[2, 2, 3]), &mut g).is_err());
    }

    #[test]
    fn dropout_on_v_changes_output_and_gradient_respects_mask() {
        let cfg = ReNetLayerConfig::new((4, 4, 1), (2, 2), 3, CellKind::Tanh).unwrap();
        let p = random_params(&cfg, 6);
        let x = random_input(&[4, 4, 1], 7);
        let mut rng = Rng::new(1);
        let (h_drop, state) = layer_forward(&x, &cfg, &p, Some(SweepDropout { rate: 0.5, rng: &mut rng })).unwrap();
        let (h_plain, _) = layer_forward(&x, &cfg, &p, None).unwrap();
        assert_ne!(h_drop, h_plain);
        let mask = state.v_mask.as_ref().unwrap();
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
        let mut g = p.zeros_like();
        layer_backward(&p, &state, &h_drop, &mut g).unwrap();
    }

    proptest! {
        #[test]
        fn vertical_sweep_never_mixes_columns(seed in any::<u64>(), shift in 1usize..4) {
            let cfg = ReNetLayerConfig::new((8, 6, 1), (2, 2), 2, CellKind::Gru).unwrap();
            let p = random_params(&cfg, seed);
            let patches = split_patches(&random_input(&[8, 6, 1], seed ^ 1), &cfg).unwrap();
            let (gi, gj) = cfg.grid();
            let perm: Vec<usize> = (0..gi).map(|i| (i + shift) % gi).collect();
            let permute = |t: &Tensor<f64>, f: usize| {
                let mut out = t.clone();
                for (dst, &src) in perm.iter().enumerate() {
                    let n = gj * f;
                    out.data_mut()[dst * n..(dst + 1) * n].copy_from_slice(&t.data()[src * n..(src + 1) * n]);
                }
                out
            };
            let v = vertical_sweep(&patches, &p.vfwd, &p.vrev).unwrap();
            let v_perm = vertical_sweep(&permute(&patches, cfg.patch_len()), &p.vfwd, &p.vrev).unwrap();
            prop_assert_eq!(permute(&v, 4), v_perm);
        }
    }
}
