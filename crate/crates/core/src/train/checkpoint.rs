//! Binary checkpoint container.
//!
//! Little-endian throughout:
//!
//! ```text
//! "RNCK" | version u32 | element width u8
//! config:   len u32 | UTF-8 text
//! progress: epoch u64 | best error f64 | best epoch u64 (u64::MAX = none) | since best u64
//! rng:      seed [u8; 32] | stream u64 | word position u128
//! adam:     step u64
//! history:  len u32 | JSON lines
//! tensors:  count u32, then per tensor
//!           name len u32 | name | rank u32 | extents u64 × rank | blob len u64 | elements
//! ```
//!
//! Parameters are stored under `param/<name>`, Adam moments under
//! `adam.m/<name>` and `adam.v/<name>`.

use std::path::{Path, PathBuf};

use super::{parse_metrics, EpochRecord, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{DType, RngState, Scalar, Tensor};

const MAGIC: &[u8; 4] = b"RNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub best_error: f64,
    pub best_epoch: Option<usize>,
    pub since_best: usize,
    pub rng: RngState,
    pub adam_step: u64,
    pub history: Vec<EpochRecord>,
    pub tensors: Vec<(String, Tensor<T>)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                source_name: self.name.clone(),
                offset: self.pos,
                message: format!("truncated: need {n} more bytes"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format {
            source_name: self.name.clone(),
            offset: at,
            message: "invalid UTF-8".into(),
        })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(T::DTYPE.width() as u8);
        put_str(&mut out, &self.config.to_text());
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.best_error.to_le_bytes());
        out.extend_from_slice(&self.best_epoch.map_or(u64::MAX, |e| e as u64).to_le_bytes());
        out.extend_from_slice(&(self.since_best as u64).to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.extend_from_slice(&self.adam_step.to_le_bytes());
        let history: String = self.history.iter().map(|r| r.to_json() + "\n").collect();
        put_str(&mut out, &history);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &s in t.shape() {
                out.extend_from_slice(&(s as u64).to_le_bytes());
            }
            out.extend_from_slice(&((t.len() * T::DTYPE.width()) as u64).to_le_bytes());
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], name: &str) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            name: name.to_string(),
        };
        let fmt = |offset: usize, message: String| Error::Format {
            source_name: name.to_string(),
            offset,
            message,
        };
        if r.take(4)? != MAGIC {
            return Err(fmt(0, "bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(fmt(4, format!("unsupported version {version}")));
        }
        let width = r.take(1)?[0];
        match DType::from_width(width) {
            Some(d) if d == T::DTYPE => {}
            Some(d) => return Err(Error::Checkpoint(format!("checkpoint holds {d}, expected {}", T::DTYPE))),
            None => return Err(fmt(8, format!("unknown element width {width}"))),
        }
        let config: ModelConfig = r.string()?.parse()?;
        let epoch = r.u64()? as usize;
        let best_error = f64::from_bits(r.u64()?);
        let best_epoch = match r.u64()? {
            u64::MAX => None,
            e => Some(e as usize),
        };
        let since_best = r.u64()? as usize;
        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        let adam_step = r.u64()?;
        let history = parse_metrics(&r.string()?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let tname = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
            let at = r.pos;
            let blob_len = r.u64()? as usize;
            let n: usize = shape.iter().product();
            if blob_len != n * T::DTYPE.width() {
                return Err(fmt(at, format!("tensor `{tname}`: blob of {blob_len} bytes for shape {shape:?}")));
            }
            let blob = r.take(blob_len)?;
            let data = blob.chunks_exact(T::DTYPE.width()).map(T::read_le).collect();
            tensors.push((tname, Tensor::new(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(fmt(r.pos, "trailing bytes".into()));
        }
        Ok(Self {
            config,
            epoch,
            best_error,
            best_epoch,
            since_best,
            rng: RngState { seed, stream, word_pos },
            adam_step,
            history,
            tensors,
        })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// Path of the best-on-validation checkpoint kept next to `path`.
pub fn best_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".best");
    PathBuf::from(p)
}
