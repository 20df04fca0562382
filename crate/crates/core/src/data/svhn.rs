//! Container for the cropped-digit SVHN variant, produced offline from the
//! MATLAB files by `scripts/svhn_convert.py`.
//!
//! Layout, all integers little-endian u32:
//!
//! ```text
//! "RNSV" | version = 1 | N | w = 32 | h = 32 | c = 3
//! N × (label u8, w*h*c bytes: R plane, G plane, B plane, each row-major)
//! ```

use std::path::Path;

use super::{bytes_to_image, read_file, Dataset, DatasetMeta, DatasetTriple, Split, SVHN_VALID};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Scalar, Tensor};

pub const SVHN_MAGIC: &[u8; 4] = b"RNSV";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;
const PIXELS: usize = 32 * 32 * 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SvhnRecord {
    pub label: u8,
    /// Planar RGB, `PIXELS` bytes.
    pub pixels: Vec<u8>,
}

pub fn write_svhn(records: &[SvhnRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + records.len() * (PIXELS + 1));
    out.extend_from_slice(SVHN_MAGIC);
    for v in [VERSION, records.len() as u32, 32, 32, 3] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (k, r) in records.iter().enumerate() {
        if r.label >= 10 || r.pixels.len() != PIXELS {
            return Err(Error::InvalidTensor(format!(
                "record {k}: label {} with {} pixel bytes",
                r.label,
                r.pixels.len()
            )));
        }
        out.push(r.label);
        out.extend_from_slice(&r.pixels);
    }
    Ok(out)
}

pub fn read_svhn(bytes: &[u8], name: &str) -> Result<Vec<SvhnRecord>> {
    let err = |offset: usize, message: String| Error::Format {
        source_name: name.to_string(),
        offset,
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(err(bytes.len(), "truncated header".into()));
    }
    if &bytes[..4] != SVHN_MAGIC {
        return Err(err(0, format!("bad magic {:?}", &bytes[..4])));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
    if word(0) != VERSION {
        return Err(err(4, format!("unsupported version {}", word(0))));
    }
    let n = word(1) as usize;
    let (w, h, c) = (word(2), word(3), word(4));
    if (w, h, c) != (32, 32, 3) {
        return Err(err(12, format!("expected 32x32x3 images, header says {w}x{h}x{c}")));
    }
    let expect = HEADER_LEN + n * (PIXELS + 1);
    if bytes.len() != expect {
        return Err(err(
            bytes.len().min(expect),
            format!("expected {expect} bytes for {n} records, found {}", bytes.len()),
        ));
    }
    bytes[HEADER_LEN..]
        .chunks_exact(PIXELS + 1)
        .enumerate()
        .map(|(k, rec)| {
            if rec[0] >= 10 {
                return Err(err(HEADER_LEN + k * (PIXELS + 1), format!("label {} out of range", rec[0])));
            }
            Ok(SvhnRecord {
                label: rec[0],
                pixels: rec[1..].to_vec(),
            })
        })
        .collect()
}

fn to_dataset<T: Scalar>(records: &[SvhnRecord], split: Split) -> Result<Dataset<T>> {
    let mut images = Vec::with_capacity(records.len() * PIXELS);
    for r in records {
        bytes_to_image(&r.pixels, 32, 32, 3, true, &mut images);
    }
    let meta = DatasetMeta {
        name: "svhn".into(),
        width: 32,
        height: 32,
        channels: 3,
        classes: 10,
    };
    Dataset::new(
        Tensor::new(&[records.len(), 32, 32, 3], images)?,
        records.iter().map(|r| r.label as usize).collect(),
        meta,
        split,
    )
}

/// `train.rnsv` plus `extra.rnsv` (when present) form the training pool; a
/// seeded permutation carves out 60,439 validation samples. `test.rnsv` is
/// the test split.
pub fn load_svhn<T: Scalar>(dir: &Path, seed: u64) -> Result<DatasetTriple<T>> {
    load_svhn_with(dir, SVHN_VALID, seed)
}

pub fn load_svhn_with<T: Scalar>(dir: &Path, valid: usize, seed: u64) -> Result<DatasetTriple<T>> {
    let mut pool = read_svhn(&read_file(&dir.join("train.rnsv"))?, "train.rnsv")?;
    let extra = dir.join("extra.rnsv");
    if extra.exists() {
        pool.extend(read_svhn(&read_file(&extra)?, "extra.rnsv")?);
    }
    let test = read_svhn(&read_file(&dir.join("test.rnsv"))?, "test.rnsv")?;
    if pool.len() <= valid {
        return Err(Error::Config(format!(
            "svhn: training pool of {} cannot spare {valid} for validation",
            pool.len()
        )));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    Rng::new(seed).shuffle(&mut order);
    let (train_idx, valid_idx) = order.split_at(pool.len() - valid);
    let mut train_idx = train_idx.to_vec();
    let mut valid_idx = valid_idx.to_vec();
    train_idx.sort_unstable();
    valid_idx.sort_unstable();
    let pick = |idx: &[usize]| idx.iter().map(|&i| pool[i].clone()).collect::<Vec<_>>();
    Ok(DatasetTriple {
        train: to_dataset(&pick(&train_idx), Split::Train)?,
        valid: to_dataset(&pick(&valid_idx), Split::Valid)?,
        test: to_dataset(&test, Split::Test)?,
    })
}
