//! Datasets, loaders, preprocessing and augmentation.
//!
//! Images are stored `[N, w, h, c]` with the horizontal index outermost, the
//! same layout a ReNet layer consumes. Row `y = 0` is the top of the image.

mod augment;
mod cifar;
mod idx;
mod preprocess;
mod svhn;
mod synthetic;

pub use augment::{augment, flip_horizontal, flip_vertical, shift, AugmentFlags, AugmentPlan, Flip, Shift, SHIFT_PIXELS};
pub use cifar::{load_cifar10, parse_cifar_batch, CIFAR_RECORD_LEN};
pub use idx::{idx_checksum, load_mnist, load_mnist_with, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use preprocess::{fingerprint, pad_zero, PixelStats, Preprocessing, ZcaTransform};
pub use svhn::{load_svhn, load_svhn_with, read_svhn, write_svhn, SvhnRecord, SVHN_MAGIC};
pub use synthetic::bars_dataset;

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Standard validation carve-outs.
pub const MNIST_VALID: usize = 10_000;
pub const SVHN_VALID: usize = 60_439;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetMeta {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub classes: usize,
}

impl DatasetMeta {
    pub fn image_len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.width, self.height, self.channels]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    /// `[N, w, h, c]`
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub meta: DatasetMeta,
    pub split: Split,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, meta: DatasetMeta, split: Split) -> Result<Self> {
        let expect = [labels.len(), meta.width, meta.height, meta.channels];
        if images.shape() != expect {
            return Err(Error::shape("dataset", images.shape(), &expect));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= meta.classes) {
            return Err(Error::Label {
                label: bad,
                classes: meta.classes,
            });
        }
        Ok(Self {
            images,
            labels,
            meta,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_data(&self, index: usize) -> &[T] {
        let n = self.meta.image_len();
        &self.images.data()[index * n..(index + 1) * n]
    }

    /// Copy of image `index` as `[w, h, c]`.
    pub fn image(&self, index: usize) -> Tensor<T> {
        Tensor::new(&self.meta.image_shape(), self.image_data(index).to_vec()).expect("image shape")
    }

    /// The samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize], split: Split) -> Result<Self> {
        let n = self.meta.image_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.image_data(i));
            labels.push(self.labels[i]);
        }
        let [w, h, c] = self.meta.image_shape();
        Dataset::new(Tensor::new(&[indices.len(), w, h, c], data)?, labels, self.meta.clone(), split)
    }

    /// The first `count` samples.
    pub fn head(&self, count: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..count.min(self.len())).collect();
        self.select(&idx, self.split)
    }

    pub fn with_images(&self, images: Tensor<T>) -> Result<Self> {
        Dataset::new(images, self.labels.clone(), self.meta.clone(), self.split)
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            images: self.images.cast(),
            labels: self.labels.clone(),
            meta: self.meta.clone(),
            split: self.split,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTriple<T> {
    pub train: Dataset<T>,
    pub valid: Dataset<T>,
    pub test: Dataset<T>,
}

impl<T: Scalar> DatasetTriple<T> {
    pub fn split(&self, split: Split) -> &Dataset<T> {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// `(train, valid)` sizes carved from a source training pool.
pub fn split_sizes(dataset: &str, pool: usize) -> Result<(usize, usize)> {
    let valid = match dataset {
        "mnist" => MNIST_VALID,
        "cifar10" => return Ok((pool - pool / 5, pool / 5)),
        "svhn" => SVHN_VALID,
        other => return Err(Error::Config(format!("no standard split for `{other}`"))),
    };
    if pool <= valid {
        return Err(Error::Config(format!(
            "{dataset}: training pool of {pool} is too small for a validation split of {valid}"
        )));
    }
    Ok((pool - valid, valid))
}

/// Converts 8-bit planar (`[c][y][x]`) or interleaved (`[y][x][c]`) pixels
/// to a `[w, h, c]` image scaled into `[0, 1]`.
pub(crate) fn bytes_to_image<T: Scalar>(raw: &[u8], w: usize, h: usize, c: usize, planar: bool, out: &mut Vec<T>) {
    let base = out.len();
    out.resize(base + w * h * c, T::zero());
    let inv = 1.0 / 255.0;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let src = if planar { (ch * h + y) * w + x } else { (y * w + x) * c + ch };
                out[base + (x * h + y) * c + ch] = T::from_f64(raw[src] as f64 * inv);
            }
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
