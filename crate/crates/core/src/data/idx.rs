use std::path::Path;

use super::{bytes_to_image, read_file, Dataset, DatasetMeta, DatasetTriple, Split, MNIST_VALID};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn format_err(name: &str, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        source_name: name.to_string(),
        offset,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, name: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| format_err(name, offset, "truncated header"))
}

/// Parses an IDX image file. Returns `(count, rows, cols, pixels)` with the
/// pixel bytes in file order.
pub fn read_idx_images(bytes: &[u8], name: &str) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, name)?;
    if magic != IMAGES_MAGIC {
        return Err(format_err(name, 0, format!("bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4, name)? as usize;
    let rows = be_u32(bytes, 8, name)? as usize;
    let cols = be_u32(bytes, 12, name)? as usize;
    let expect = 16 + n * rows * cols;
    if bytes.len() != expect {
        return Err(format_err(
            name,
            bytes.len().min(expect),
            format!("expected {expect} bytes for {n} images of {rows}x{cols}, found {}", bytes.len()),
        ));
    }
    Ok((n, rows, cols, bytes[16..].to_vec()))
}

pub fn read_idx_labels(bytes: &[u8], name: &str) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, name)?;
    if magic != LABELS_MAGIC {
        return Err(format_err(name, 0, format!("bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4, name)? as usize;
    if bytes.len() != 8 + n {
        return Err(format_err(
            name,
            bytes.len().min(8 + n),
            format!("expected {} bytes for {n} labels, found {}", 8 + n, bytes.len()),
        ));
    }
    Ok(bytes[8..].to_vec())
}

pub fn write_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Position-weighted checksum `sum (k + 1) * pixel_k` over an image's bytes
/// in row-major file order. `scripts/idx_checksum.py` computes the same value.
pub fn idx_checksum<T: Scalar>(data: &Dataset<T>, index: usize) -> u64 {
    let (w, h, c) = (data.meta.width, data.meta.height, data.meta.channels);
    let img = data.image_data(index);
    let mut sum = 0u64;
    let mut k = 0u64;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let raw = (img[(x * h + y) * c + ch].as_f64() * 255.0).round() as u64;
                k += 1;
                sum += k * raw;
            }
        }
    }
    sum
}

fn load_pair<T: Scalar>(dir: &Path, images: &str, labels: &str) -> Result<(Tensor<T>, Vec<usize>, usize, usize)> {
    let img_path = dir.join(images);
    let lbl_path = dir.join(labels);
    let (n, rows, cols, pixels) = read_idx_images(&read_file(&img_path)?, images)?;
    let lbls = read_idx_labels(&read_file(&lbl_path)?, labels)?;
    if lbls.len() != n {
        return Err(format_err(labels, 4, format!("{} labels for {n} images", lbls.len())));
    }
    let mut data = Vec::with_capacity(n * rows * cols);
    for k in 0..n {
        bytes_to_image(&pixels[k * rows * cols..(k + 1) * rows * cols], cols, rows, 1, false, &mut data);
    }
    let labels = lbls.iter().map(|&l| l as usize).collect();
    Ok((Tensor::new(&[n, cols, rows, 1], data)?, labels, cols, rows))
}

/// Loads the four standard IDX files from `dir`. The last 10,000 images of
/// the training file become the validation split.
pub fn load_mnist<T: Scalar>(dir: &Path) -> Result<DatasetTriple<T>> {
    load_mnist_with(dir, MNIST_VALID)
}

pub fn load_mnist_with<T: Scalar>(dir: &Path, valid: usize) -> Result<DatasetTriple<T>> {
    let (train_x, train_y, w, h) = load_pair::<T>(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte")?;
    let (test_x, test_y, tw, th) = load_pair::<T>(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?;
    if (tw, th) != (w, h) {
        return Err(Error::shape("mnist test images", &[tw, th], &[w, h]));
    }
    let n = train_y.len();
    if n <= valid {
        return Err(Error::Config(format!("mnist: {n} training images cannot spare {valid} for validation")));
    }
    let meta = DatasetMeta {
        name: "mnist".into(),
        width: w,
        height: h,
        channels: 1,
        classes: 10,
    };
    let pool = Dataset::new(train_x, train_y, meta.clone(), Split::Train)?;
    let train = pool.select(&(0..n - valid).collect::<Vec<_>>(), Split::Train)?;
    let valid = pool.select(&(n - valid..n).collect::<Vec<_>>(), Split::Valid)?;
    let test = Dataset::new(test_x, test_y, meta, Split::Test)?;
    Ok(DatasetTriple { train, valid, test })
}
