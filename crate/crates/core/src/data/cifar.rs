use std::path::Path;

use super::{bytes_to_image, read_file, Dataset, DatasetMeta, DatasetTriple, Split};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Label byte followed by 32×32 R, G and B planes.
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;

fn meta() -> DatasetMeta {
    DatasetMeta {
        name: "cifar10".into(),
        width: 32,
        height: 32,
        channels: 3,
        classes: 10,
    }
}

/// Parses one binary batch file into images `[n, 32, 32, 3]` and labels.
pub fn parse_cifar_batch<T: Scalar>(bytes: &[u8], name: &str) -> Result<(Vec<T>, Vec<usize>)> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        let offset = bytes.len() - bytes.len() % CIFAR_RECORD_LEN;
        return Err(Error::Format {
            source_name: name.to_string(),
            offset,
            message: format!("length {} is not a positive multiple of {CIFAR_RECORD_LEN}", bytes.len()),
        });
    }
    let n = bytes.len() / CIFAR_RECORD_LEN;
    let mut images = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for (k, rec) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
        if rec[0] >= 10 {
            return Err(Error::Format {
                source_name: name.to_string(),
                offset: k * CIFAR_RECORD_LEN,
                message: format!("label {} out of range", rec[0]),
            });
        }
        labels.push(rec[0] as usize);
        bytes_to_image(&rec[1..], 32, 32, 3, true, &mut images);
    }
    Ok((images, labels))
}

fn load_batches<T: Scalar>(dir: &Path, names: &[&str], split: Split) -> Result<Dataset<T>> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for name in names {
        let (x, y) = parse_cifar_batch::<T>(&read_file(&dir.join(name))?, name)?;
        images.extend(x);
        labels.extend(y);
    }
    Dataset::new(Tensor::new(&[labels.len(), 32, 32, 3], images)?, labels, meta(), split)
}

/// Reads the binary distribution: batches 1–4 train, batch 5 validation,
/// the test batch test.
pub fn load_cifar10<T: Scalar>(dir: &Path) -> Result<DatasetTriple<T>> {
    Ok(DatasetTriple {
        train: load_batches(
            dir,
            &["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin"],
            Split::Train,
        )?,
        valid: load_batches(dir, &["data_batch_5.bin"], Split::Valid)?,
        test: load_batches(dir, &["test_batch.bin"], Split::Test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, seed: usize) -> Vec<u8> {
        let mut r = vec![label];
        r.extend((0..3072).map(|i| ((i + seed) % 251) as u8));
        r
    }

    #[test]
    fn record_layout() {
        let (x, y) = parse_cifar_batch::<f64>(&record(7, 0), "b").unwrap();
        assert_eq!(y, vec![7]);
        // Green plane, row 2, column 5.
        let raw = (1024 + 2 * 32 + 5) % 251;
        assert_eq!(x[(5 * 32 + 2) * 3 + 1], raw as f64 / 255.0);
    }

    #[test]
    fn bad_length_and_label() {
        let mut b = record(1, 0);
        b.extend(record(2, 1));
        b.pop();
        match parse_cifar_batch::<f32>(&b, "b").unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, CIFAR_RECORD_LEN),
            e => panic!("{e}"),
        }
        let mut b = record(1, 0);
        b.extend(record(12, 1));
        match parse_cifar_batch::<f32>(&b, "b").unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, CIFAR_RECORD_LEN),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn batch_assignment() {
        let dir = tempfile::tempdir().unwrap();
        let names = ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"];
        for (k, n) in names.iter().enumerate() {
            let mut b = record(k as u8, k);
            b.extend(record(k as u8, k + 1));
            std::fs::write(dir.path().join(n), b).unwrap();
        }
        let d = load_cifar10::<f32>(dir.path()).unwrap();
        assert_eq!((d.train.len(), d.valid.len(), d.test.len()), (8, 2, 2));
        assert_eq!(d.train.labels, vec![0, 0, 1, 1, 2, 2, 3, 3]);
        assert_eq!(d.valid.labels, vec![4, 4]);
        assert_eq!(d.test.labels, vec![5, 5]);
        assert_eq!(d.test.split, Split::Test);
    }
}
