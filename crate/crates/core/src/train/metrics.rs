//! Per-epoch metrics as JSON lines, and a static SVG rendering of them.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    /// Error on the noisy training passes of the epoch.
    pub train_error: f64,
    pub valid_error: f64,
    pub valid_nll: f64,
    pub wall_time_s: f64,
}

impl EpochRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    /// Equal in every field except wall time.
    pub fn same_metrics(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.train_nll.to_bits() == other.train_nll.to_bits()
            && self.train_error.to_bits() == other.train_error.to_bits()
            && self.valid_error.to_bits() == other.valid_error.to_bits()
            && self.valid_nll.to_bits() == other.valid_nll.to_bits()
    }
}

pub fn parse_metrics(text: &str) -> Result<Vec<EpochRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Config(format!("metrics line {}: {e}", i + 1))))
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochRecord>> {
    parse_metrics(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn append_metrics(path: &Path, record: &EpochRecord) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{}", record.to_json()).map_err(|e| Error::io(path, e))
}

/// Line chart of training NLL and validation error against epoch.
pub fn render_svg(records: &[EpochRecord]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let max_epoch = records.iter().map(|r| r.epoch).max().unwrap_or(1).max(1) as f64;
    let max_nll = records.iter().map(|r| r.train_nll).fold(0.0, f64::max).max(1e-12);
    let x = |e: usize| pad + (w - 2.0 * pad) * e as f64 / max_epoch;
    let y = |v: f64, top: f64| h - pad - (h - 2.0 * pad) * (v / top).clamp(0.0, 1.0);
    let line = |f: &dyn Fn(&EpochRecord) -> f64, top: f64| {
        records
            .iter()
            .map(|r| format!("{:.2},{:.2}", x(r.epoch), y(f(r), top)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{pad},{pad} V{} H{}" stroke="black" fill="none"/>"#,
        h - pad,
        w - pad
    );
    let _ = writeln!(
        s,
        r#"<polyline points="{}" stroke="steelblue" stroke-width="2" fill="none"/>"#,
        line(&|r| r.train_nll, max_nll)
    );
    let _ = writeln!(
        s,
        r#"<polyline points="{}" stroke="firebrick" stroke-width="2" fill="none"/>"#,
        line(&|r| r.valid_error, 1.0)
    );
    let _ = writeln!(s, r#"<text x="{pad}" y="20" fill="steelblue">train NLL (max {max_nll:.4})</text>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" fill="firebrick">valid error (0 to 1)</text>"#, w / 2.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}">epoch (1 to {max_epoch})</text>"#, w / 2.0 - 40.0, h - 15.0);
    s.push_str("</svg>\n");
    s
}
