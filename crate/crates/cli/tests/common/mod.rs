//! Scalar reference implementations used as independent oracles. Every value
//! is computed one element at a time straight from the cell and sweep
//! equations, sharing no code with the library kernels.

#![allow(dead_code)]

use renet::cells::CellParams;
use renet::{Rng, Tensor};

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `(M v)[row]` for a row-major `[rows, cols]` matrix, restricted to rows
/// `offset..offset + n`.
fn affine(m: &Tensor<f64>, offset: usize, n: usize, v: &[f64]) -> Vec<f64> {
    let cols = m.shape()[1];
    (offset..offset + n)
        .map(|r| (0..cols).map(|k| m.data()[r * cols + k] * v[k]).sum())
        .collect()
}

/// One step of `cell` on a single input vector. Returns `(h, c)`.
pub fn cell_step(cell: &CellParams<f64>, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    match cell {
        CellParams::Tanh(p) => {
            let d = h.len();
            let wx = affine(&p.w, 0, d, x);
            let uh = affine(&p.u, 0, d, h);
            let out = (0..d).map(|k| (wx[k] + uh[k] + p.b.data()[k]).tanh()).collect();
            (out, Vec::new())
        }
        CellParams::Gru(p) => {
            let d = h.len();
            let gate = |block: usize| -> Vec<f64> {
                let wx = affine(&p.w_g, block * d, d, x);
                let uh = affine(&p.u_g, block * d, d, h);
                (0..d).map(|k| sigmoid(wx[k] + uh[k] + p.b_g.data()[block * d + k])).collect()
            };
            let update = gate(0);
            let reset = gate(1);
            let rh: Vec<f64> = (0..d).map(|k| reset[k] * h[k]).collect();
            let wx = affine(&p.w, 0, d, x);
            let urh = affine(&p.u, 0, d, &rh);
            let out = (0..d)
                .map(|k| {
                    let cand = (wx[k] + urh[k] + p.b.data()[k]).tanh();
                    (1.0 - update[k]) * h[k] + update[k] * cand
                })
                .collect();
            (out, Vec::new())
        }
        CellParams::Lstm(p) => {
            let d = h.len();
            let pre = |block: usize| -> Vec<f64> {
                let wx = affine(&p.w, block * d, d, x);
                let uh = affine(&p.u, block * d, d, h);
                (0..d).map(|k| wx[k] + uh[k] + p.b.data()[block * d + k]).collect()
            };
            let input: Vec<f64> = pre(0).into_iter().map(sigmoid).collect();
            let forget: Vec<f64> = pre(1).into_iter().map(sigmoid).collect();
            let output: Vec<f64> = pre(2).into_iter().map(sigmoid).collect();
            let cand: Vec<f64> = pre(3).into_iter().map(f64::tanh).collect();
            let c_new: Vec<f64> = (0..d).map(|k| forget[k] * c[k] + input[k] * cand[k]).collect();
            let h_new = (0..d).map(|k| output[k] * c_new[k].tanh()).collect();
            (h_new, c_new)
        }
    }
}

/// Runs `cell` over `seq` from a zero state and returns every hidden state.
fn run(cell: &CellParams<f64>, seq: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = cell.hidden_dim();
    let (mut h, mut c) = (vec![0.0; d], vec![0.0; d]);
    seq.iter()
        .map(|x| {
            let (hn, cn) = cell_step(cell, x, &h, &c);
            h = hn;
            if !cn.is_empty() {
                c = cn;
            }
            h.clone()
        })
        .collect()
}

fn at(t: &Tensor<f64>, i: usize, j: usize) -> Vec<f64> {
    let (gj, f) = (t.shape()[1], t.shape()[2]);
    let base = (i * gj + j) * f;
    t.data()[base..base + f].to_vec()
}

fn bidirectional(fwd: &CellParams<f64>, rev: &CellParams<f64>, seq: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let f = run(fwd, seq);
    let reversed: Vec<Vec<f64>> = seq.iter().rev().cloned().collect();
    let mut r = run(rev, &reversed);
    r.reverse();
    f.into_iter().zip(r).map(|(mut a, b)| {
        a.extend(b);
        a
    })
    .collect()
}

/// Reference column sweep: for every column `i`, time runs over `j`.
pub fn vertical_sweep(x: &Tensor<f64>, fwd: &CellParams<f64>, rev: &CellParams<f64>) -> Tensor<f64> {
    let (gi, gj) = (x.shape()[0], x.shape()[1]);
    let d = fwd.hidden_dim();
    let mut out = vec![0.0; gi * gj * 2 * d];
    for i in 0..gi {
        let seq: Vec<Vec<f64>> = (0..gj).map(|j| at(x, i, j)).collect();
        for (j, v) in bidirectional(fwd, rev, &seq).into_iter().enumerate() {
            out[(i * gj + j) * 2 * d..][..2 * d].copy_from_slice(&v);
        }
    }
    Tensor::new(&[gi, gj, 2 * d], out).unwrap()
}

/// Reference row sweep: for every row `j`, time runs over `i`.
pub fn horizontal_sweep(x: &Tensor<f64>, fwd: &CellParams<f64>, rev: &CellParams<f64>) -> Tensor<f64> {
    let (gi, gj) = (x.shape()[0], x.shape()[1]);
    let d = fwd.hidden_dim();
    let mut out = vec![0.0; gi * gj * 2 * d];
    for j in 0..gj {
        let seq: Vec<Vec<f64>> = (0..gi).map(|i| at(x, i, j)).collect();
        for (i, v) in bidirectional(fwd, rev, &seq).into_iter().enumerate() {
            out[(i * gj + j) * 2 * d..][..2 * d].copy_from_slice(&v);
        }
    }
    Tensor::new(&[gi, gj, 2 * d], out).unwrap()
}

/// Reference patch split of an image `[w, h, c]` (pixel `(x, y)` at
/// `(x * h + y) * c`) into `[w / pw, h / ph, pw * ph * c]`, each patch read
/// row by row from its top-left pixel.
pub fn split_patches(img: &Tensor<f64>, pw: usize, ph: usize) -> Tensor<f64> {
    let (w, h, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let (gi, gj) = (w / pw, h / ph);
    let mut out = Vec::with_capacity(w * h * c);
    for i in 0..gi {
        for j in 0..gj {
            for dy in 0..ph {
                for dx in 0..pw {
                    for ch in 0..c {
                        out.push(img.data()[((i * pw + dx) * h + j * ph + dy) * c + ch]);
                    }
                }
            }
        }
    }
    Tensor::new(&[gi, gj, pw * ph * c], out).unwrap()
}

/// Overwrites every parameter of `cell` with a uniform draw in `[-s, s]`.
pub fn randomize(cell: &mut CellParams<f64>, rng: &mut Rng, s: f64) {
    for (_, t) in cell.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.uniform_range(-s, s);
        }
    }
}

/// Two-sided `k`-sigma binomial interval for `n` draws at probability `p`.
pub fn binomial_bounds(n: usize, p: f64, k: f64) -> (f64, f64) {
    let n = n as f64;
    let sigma = (n * p * (1.0 - p)).sqrt();
    (n * p - k * sigma, n * p + k * sigma)
}

/// Sample covariance of the rows `[n, dim]` computed entry by entry.
pub fn covariance(rows: &[f64], n: usize, dim: usize) -> Vec<f64> {
    let mean: Vec<f64> = (0..dim).map(|a| (0..n).map(|k| rows[k * dim + a]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![0.0; dim * dim];
    for a in 0..dim {
        for b in a..dim {
            let s: f64 = (0..n)
                .map(|k| (rows[k * dim + a] - mean[a]) * (rows[k * dim + b] - mean[b]))
                .sum::<f64>()
                / n as f64;
            cov[a * dim + b] = s;
            cov[b * dim + a] = s;
        }
    }
    cov
}
