use nalgebra::{DMatrix, SymmetricEigen};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

const VARIANCE_FLOOR: f64 = 1e-8;

/// FNV-1a over a tensor's shape and the f64 bit patterns of its values.
pub fn fingerprint<T: Scalar>(t: &Tensor<T>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: [u8; 8]| {
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for &s in t.shape() {
        eat((s as u64).to_le_bytes());
    }
    for v in t.data() {
        eat(v.as_f64().to_bits().to_le_bytes());
    }
    h
}

fn rows_of<T: Scalar>(images: &Tensor<T>) -> Result<(usize, usize)> {
    if images.rank() < 2 {
        return Err(Error::InvalidTensor(format!("expected a batch of images, got shape {:?}", images.shape())));
    }
    let n = images.shape()[0];
    Ok((n, images.len() / n))
}

/// Per-position, per-channel mean and standard deviation of a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Positions whose variance was raised to the floor.
    pub floored: Vec<usize>,
    pub fitted_on: u64,
}

impl PixelStats {
    pub fn fit<T: Scalar>(images: &Tensor<T>) -> Result<Self> {
        let (n, d) = rows_of(images)?;
        let x = images.data();
        let mut mean = vec![0.0; d];
        for row in x.chunks_exact(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v.as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for row in x.chunks_exact(d) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let c = v.as_f64() - m;
                *s += c * c;
            }
        }
        let mut floored = Vec::new();
        let std = var
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let v = s / n as f64;
                if v < VARIANCE_FLOOR {
                    floored.push(k);
                    VARIANCE_FLOOR.sqrt()
                } else {
                    v.sqrt()
                }
            })
            .collect();
        Ok(Self {
            mean,
            std,
            floored,
            fitted_on: fingerprint(images),
        })
    }

    /// A human-readable warning when any variance hit the floor.
    pub fn warning(&self) -> Option<String> {
        (!self.floored.is_empty()).then(|| {
            format!(
                "{} of {} pixel positions have variance below {VARIANCE_FLOOR:e}; floored",
                self.floored.len(),
                self.mean.len()
            )
        })
    }

    pub fn apply<T: Scalar>(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, d) = rows_of(images)?;
        if d != self.mean.len() {
            return Err(Error::shape("standardize", images.shape(), &[self.mean.len()]));
        }
        let mut out = images.clone();
        for row in out.data_mut().chunks_exact_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = T::from_f64((v.as_f64() - m) / s);
            }
        }
        Ok(out)
    }
}

/// Zero-phase whitening `(x - mean) W` with `W = E diag(1/sqrt(s + λ)) Eᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZcaTransform {
    pub mean: Vec<f64>,
    /// `[D, D]`, row-major and symmetric.
    pub whitening: Vec<f64>,
    /// Absolute regularizer added to every eigenvalue.
    pub lambda: f64,
    pub fitted_on: u64,
}

impl ZcaTransform {
    /// Fits on `images` (`[N, ...]`). `lambda_rel` is expressed as a fraction
    /// of the mean covariance eigenvalue.
    pub fn fit<T: Scalar>(images: &Tensor<T>, lambda_rel: f64) -> Result<Self> {
        let (n, d) = rows_of(images)?;
        let mut x = DMatrix::from_row_iterator(n, d, images.data().iter().map(|v| v.as_f64()));
        let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
        for (j, m) in mean.iter().enumerate() {
            x.column_mut(j).add_scalar_mut(-m);
        }
        let cov = (x.transpose() * &x) / n as f64;
        let mut t = Self::from_covariance(mean, cov, lambda_rel)?;
        t.fitted_on = fingerprint(images);
        Ok(t)
    }

    /// Whitening for a given covariance. Errors if it has an eigenvalue below
    /// `-1e-8 * max eigenvalue`, or if `s + λ` is not positive.
    pub fn from_covariance(mean: Vec<f64>, cov: DMatrix<f64>, lambda_rel: f64) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(Error::shape("zca covariance", &[cov.nrows(), cov.ncols()], &[d, d]));
        }
        if !(lambda_rel >= 0.0) {
            return Err(Error::Config(format!("zca lambda must be non-negative, got {lambda_rel}")));
        }
        let sym = (&cov + cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-8 * max.max(f64::MIN_POSITIVE) {
            return Err(Error::Numerical(format!(
                "covariance is not positive semi-definite: eigenvalue {min:e} (largest {max:e})"
            )));
        }
        let mean_eig = eig.eigenvalues.iter().map(|s| s.max(0.0)).sum::<f64>() / d as f64;
        let lambda = lambda_rel * mean_eig;
        let mut scaled = eig.eigenvectors.clone();
        for (k, s) in eig.eigenvalues.iter().enumerate() {
            let denom = s.max(0.0) + lambda;
            if !(denom > 0.0) {
                return Err(Error::Numerical(format!(
                    "covariance eigenvalue {s:e} with lambda {lambda:e} cannot be inverted; raise the regularizer"
                )));
            }
            scaled.column_mut(k).scale_mut(1.0 / denom.sqrt());
        }
        let w = &scaled * eig.eigenvectors.transpose();
        let w = (&w + w.transpose()) * 0.5;
        // Symmetric, so column-major storage is also the row-major layout.
        Ok(Self {
            mean,
            whitening: w.as_slice().to_vec(),
            lambda,
            fitted_on: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply<T: Scalar>(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, d) = rows_of(images)?;
        if d != self.dim() {
            return Err(Error::shape("zca", images.shape(), &[self.dim()]));
        }
        let mut x = DMatrix::from_row_iterator(n, d, images.data().iter().map(|v| v.as_f64()));
        for (j, m) in self.mean.iter().enumerate() {
            x.column_mut(j).add_scalar_mut(-m);
        }
        let w = DMatrix::from_column_slice(d, d, &self.whitening);
        let y = x * w;
        let data = y.transpose().as_slice().iter().map(|&v| T::from_f64(v)).collect();
        Tensor::new(images.shape(), data)
    }
}

/// Pipeline fitted on the training split only: optional ZCA, then optional
/// per-pixel standardization.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Preprocessing {
    pub zca: Option<ZcaTransform>,
    pub stats: Option<PixelStats>,
}

impl Preprocessing {
    pub fn fit<T: Scalar>(train: &Dataset<T>, zca_lambda: Option<f64>, standardize: bool) -> Result<Self> {
        let mut images = train.images.clone();
        let zca = match zca_lambda {
            Some(l) => {
                let z = ZcaTransform::fit(&images, l)?;
                images = z.apply(&images)?;
                Some(z)
            }
            None => None,
        };
        let stats = if standardize { Some(PixelStats::fit(&images)?) } else { None };
        Ok(Self { zca, stats })
    }

    pub fn apply<T: Scalar>(&self, data: &Dataset<T>) -> Result<Dataset<T>> {
        let mut images = data.images.clone();
        if let Some(z) = &self.zca {
            images = z.apply(&images)?;
        }
        if let Some(s) = &self.stats {
            images = s.apply(&images)?;
        }
        data.with_images(images)
    }
}

/// Places a `[w, h, c]` image at the top-left of a zero `[w2, h2, c]` canvas.
pub fn pad_zero<T: Scalar>(image: &Tensor<T>, width: usize, height: usize) -> Result<Tensor<T>> {
    let [w, h, c] = match image.shape() {
        &[w, h, c] => [w, h, c],
        s => return Err(Error::InvalidTensor(format!("pad_zero expects [w, h, c], got {s:?}"))),
    };
    if width < w || height < h {
        return Err(Error::Geometry(format!("cannot pad {w}x{h} down to {width}x{height}")));
    }
    let mut out = Tensor::zeros(&[width, height, c]);
    for x in 0..w {
        let src = &image.data()[x * h * c..(x + 1) * h * c];
        out.data_mut()[x * height * c..x * height * c + h * c].copy_from_slice(src);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetMeta, Split};
    use crate::numerics::Rng;

    fn covariance(x: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
        let (n, d) = (x.shape()[0], x.len() / x.shape()[0]);
        let mut mean = vec![0.0; d];
        for r in x.data().chunks(d) {
            for j in 0..d {
                mean[j] += r[j] / n as f64;
            }
        }
        let mut c = vec![0.0; d * d];
        for r in x.data().chunks(d) {
            for a in 0..d {
                for b in 0..d {
                    c[a * d + b] += (r[a] - mean[a]) * (r[b] - mean[b]) / n as f64;
                }
            }
        }
        (mean, c)
    }

    #[test]
    fn two_sample_standardize() {
        let x = Tensor::<f64>::from_f64_slice(&[2, 1], &[0.0, 2.0]).unwrap();
        let s = PixelStats::fit(&x).unwrap();
        assert_eq!(s.apply(&x).unwrap().data(), &[-1.0, 1.0]);
        assert!(s.warning().is_none());
    }

    #[test]
    fn constant_images_floor_and_zero() {
        let x = Tensor::<f64>::filled(&[5, 2, 2, 1], 0.3);
        let s = PixelStats::fit(&x).unwrap();
        assert_eq!(s.floored.len(), 4);
        assert!(s.warning().unwrap().contains("floored"));
        assert!(s.apply(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardized_moments() {
        let mut rng = Rng::new(4);
        let x = Tensor::<f64>::from_fn(&[500, 3, 3, 2], |i| rng.normal() * (1.0 + (i % 18) as f64) + 5.0);
        let y = PixelStats::fit(&x).unwrap().apply(&x).unwrap();
        let (mean, cov) = covariance(&y);
        for j in 0..18 {
            assert!(mean[j].abs() < 1e-6);
            assert!((cov[j * 18 + j] - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn toy_whitening_against_closed_form_eigen() {
        let x = Tensor::<f64>::from_f64_slice(&[3, 2], &[0.0, 0.0, 2.0, 1.0, 1.0, 3.0]).unwrap();
        let (_, c) = covariance(&x);
        // 2x2 symmetric eigendecomposition by hand.
        let (a, b, d) = (c[0], c[1], c[3]);
        let tr = a + d;
        let disc = ((a - d) * (a - d) / 4.0 + b * b).sqrt();
        let (s1, s2) = (tr / 2.0 + disc, tr / 2.0 - disc);
        let v1 = {
            let (p, q) = (b, s1 - a);
            let n = (p * p + q * q).sqrt();
            (p / n, q / n)
        };
        let v2 = (-v1.1, v1.0);
        let oracle = |i: usize, j: usize| {
            let e = [[v1.0, v2.0], [v1.1, v2.1]];
            e[i][0] * e[j][0] / s1.sqrt() + e[i][1] * e[j][1] / s2.sqrt()
        };
        let z = ZcaTransform::fit(&x, 0.0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((z.whitening[i * 2 + j] - oracle(i, j)).abs() < 1e-10);
            }
        }
        let (_, wc) = covariance(&z.apply(&x).unwrap());
        for (k, v) in wc.iter().enumerate() {
            let expect = if k == 0 || k == 3 { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-10, "{wc:?}");
        }
    }

    #[test]
    fn white_data_gives_near_identity() {
        let mut rng = Rng::new(21);
        let x = Tensor::<f64>::from_fn(&[10_000, 6], |_| rng.normal());
        let z = ZcaTransform::fit(&x, 1e-12).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((z.whitening[i * 6 + j] - e).abs() < 5e-2);
                assert_eq!(z.whitening[i * 6 + j], z.whitening[j * 6 + i]);
            }
        }
    }

    #[test]
    fn whitened_covariance_is_diagonal() {
        let mut rng = Rng::new(8);
        let base = Tensor::<f64>::from_fn(&[400, 12], |_| rng.normal());
        // Mix the columns to correlate them.
        let mut x = base.clone();
        for r in 0..400 {
            for j in 1..12 {
                x.data_mut()[r * 12 + j] += 0.7 * base.data()[r * 12 + j - 1];
            }
        }
        let z = ZcaTransform::fit(&x, 1e-12).unwrap();
        let (_, c) = covariance(&z.apply(&x).unwrap());
        for a in 0..12 {
            for b in 0..12 {
                if a != b {
                    assert!(c[a * 12 + b].abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn non_psd_covariance_is_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            ZcaTransform::from_covariance(vec![0.0; 2], cov, 0.01),
            Err(Error::Numerical(_))
        ));
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(ZcaTransform::from_covariance(vec![0.0; 2], singular.clone(), 0.0).is_err());
        assert!(ZcaTransform::from_covariance(vec![0.0; 2], singular, 0.01).is_ok());
    }

    #[test]
    fn pipeline_fits_on_training_images_only() {
        let meta = DatasetMeta {
            name: "t".into(),
            width: 2,
            height: 2,
            channels: 1,
            classes: 2,
        };
        let mut rng = Rng::new(2);
        let mk = |n: usize, split, rng: &mut Rng| {
            Dataset::new(Tensor::<f64>::from_fn(&[n, 2, 2, 1], |_| rng.normal()), vec![0; n], meta.clone(), split).unwrap()
        };
        let train = mk(50, Split::Train, &mut rng);
        let valid = mk(20, Split::Valid, &mut rng);
        let p = Preprocessing::fit(&train, Some(0.01), true).unwrap();
        let fp = fingerprint(&train.images);
        assert_eq!(p.zca.as_ref().unwrap().fitted_on, fp);
        assert_ne!(p.zca.as_ref().unwrap().fitted_on, fingerprint(&valid.images));
        let whitened = p.zca.as_ref().unwrap().apply(&train.images).unwrap();
        assert_eq!(p.stats.as_ref().unwrap().fitted_on, fingerprint(&whitened));
        let out = p.apply(&valid).unwrap();
        assert_eq!(out.labels, valid.labels);
        assert_eq!(out.split, Split::Valid);
    }

    #[test]
    fn padding_places_image_top_left() {
        let img = Tensor::<f64>::from_fn(&[2, 3, 1], |i| i as f64 + 1.0);
        let p = pad_zero(&img, 4, 4).unwrap();
        assert_eq!(p.shape(), &[4, 4, 1]);
        assert_eq!(&p.data()[..4], &[1.0, 2.0, 3.0, 0.0]);
        assert_eq!(&p.data()[4..8], &[4.0, 5.0, 6.0, 0.0]);
        assert!(p.data()[8..].iter().all(|&v| v == 0.0));
        assert!(pad_zero(&img, 1, 4).is_err());
    }
}
