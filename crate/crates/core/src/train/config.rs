//! Flat `key = value` model and training configuration.
//!
//! Lists are comma separated, `#` starts a comment, and `none` clears an
//! optional value. Keys not listed in the file keep their defaults.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::cells::CellKind;
use crate::data::AugmentFlags;
use crate::error::{Error, Result};
use crate::numerics::Activation;
use crate::optimizer::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    /// `(w_p, h_p)`
    pub patch: (usize, usize),
    pub hidden: usize,
    pub cell: CellKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FcSpec {
    pub units: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dataset: String,
    /// `(w, h, c)`
    pub input: (usize, usize, usize),
    pub classes: usize,
    pub renet: Vec<LayerSpec>,
    pub fc: Vec<FcSpec>,
    pub augment: AugmentFlags,
    /// Inverted dropout on `V` and `H` of every ReNet layer.
    pub renet_dropout: f64,
    /// Inverted dropout after every hidden fully-connected layer.
    pub fc_dropout: f64,
    /// Probability of zeroing each raw input variable, without rescaling.
    pub input_mask: f64,
    /// ZCA regularizer relative to the mean covariance eigenvalue.
    pub zca_lambda: Option<f64>,
    pub standardize: bool,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Use only the first `n` training samples.
    pub train_limit: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dataset: "bars".into(),
            input: (8, 8, 1),
            classes: 2,
            renet: vec![LayerSpec {
                patch: (2, 2),
                hidden: 8,
                cell: CellKind::Gru,
            }],
            fc: vec![],
            augment: AugmentFlags::default(),
            renet_dropout: 0.2,
            fc_dropout: 0.5,
            input_mask: 0.2,
            zca_lambda: None,
            standardize: false,
            adam: AdamConfig::default(),
            batch_size: 64,
            patience: 10,
            max_epochs: 100,
            seed: 0,
            train_limit: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{}`", v.trim())))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() || v.trim() == "none" {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse(key, s)).collect()
}

fn parse_opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    match v.trim() {
        "none" => Ok(None),
        s => parse(key, s).map(Some),
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        s => Err(Error::Config(format!("`{key}`: expected true or false, got `{s}`"))),
    }
}

fn parse_patch(key: &str, v: &str) -> Result<(usize, usize)> {
    let (w, h) = v
        .trim()
        .split_once('x')
        .ok_or_else(|| Error::Config(format!("`{key}`: patch `{}` is not of the form WxH", v.trim())))?;
    Ok((parse(key, w)?, parse(key, h)?))
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    if items.is_empty() {
        return "none".into();
    }
    items.iter().map(f).collect::<Vec<_>>().join(", ")
}

impl ModelConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    /// Canonical text form; parsing it returns an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let a = &self.adam;
        let lines = [
            ("dataset", self.dataset.clone()),
            ("input", format!("{}, {}, {}", self.input.0, self.input.1, self.input.2)),
            ("classes", self.classes.to_string()),
            ("renet_layers", self.renet.len().to_string()),
            ("renet_patch", join(&self.renet, |l| format!("{}x{}", l.patch.0, l.patch.1))),
            ("renet_hidden", join(&self.renet, |l| l.hidden.to_string())),
            ("renet_cell", join(&self.renet, |l| l.cell.name().to_string())),
            ("fc_layers", self.fc.len().to_string()),
            ("fc_hidden", join(&self.fc, |f| f.units.to_string())),
            ("fc_activation", join(&self.fc, |f| f.activation.name().to_string())),
            ("flip", self.augment.flip.to_string()),
            ("shift", self.augment.shift.to_string()),
            ("renet_dropout", self.renet_dropout.to_string()),
            ("fc_dropout", self.fc_dropout.to_string()),
            ("input_mask", self.input_mask.to_string()),
            ("zca_lambda", opt_str(&self.zca_lambda)),
            ("standardize", self.standardize.to_string()),
            ("learning_rate", a.learning_rate.to_string()),
            ("beta1", a.beta1.to_string()),
            ("beta2", a.beta2.to_string()),
            ("epsilon", a.epsilon.to_string()),
            ("clip_norm", opt_str(&a.clip_norm)),
            ("batch_size", self.batch_size.to_string()),
            ("patience", self.patience.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("train_limit", opt_str(&self.train_limit)),
        ];
        for (k, v) in lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Checks value ranges and list lengths. Shape chaining is checked when
    /// the model is planned.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, p) in [
            ("renet_dropout", self.renet_dropout),
            ("fc_dropout", self.fc_dropout),
            ("input_mask", self.input_mask),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("`{name}` must be in [0, 1), got {p}"));
            }
        }
        if self.classes < 2 {
            return bad(format!("`classes` must be at least 2, got {}", self.classes));
        }
        if self.renet.is_empty() {
            return bad("at least one ReNet layer is required".into());
        }
        if self.batch_size == 0 {
            return bad("`batch_size` must be positive".into());
        }
        if self.renet.iter().any(|l| l.hidden == 0) || self.fc.iter().any(|f| f.units == 0) {
            return bad("layer widths must be positive".into());
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return bad(format!("invalid optimizer settings {a:?}"));
        }
        Ok(())
    }

    /// Equality on everything that shapes a run except the epoch budget.
    pub fn same_run(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.max_epochs = other.max_epochs;
        &a == other
    }
}

impl FromStr for ModelConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut counts: (Option<usize>, Option<usize>) = (None, None);
        let mut patches = None;
        let mut hidden = None;
        let mut cells = None;
        let mut fc_units = None;
        let mut fc_act = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            match key {
                "dataset" => cfg.dataset = v.trim().to_string(),
                "input" => {
                    let dims: Vec<usize> = parse_list(key, v)?;
                    match dims[..] {
                        [w, h, c] => cfg.input = (w, h, c),
                        _ => return Err(Error::Config("`input` needs three extents w, h, c".into())),
                    }
                }
                "classes" => cfg.classes = parse(key, v)?,
                "renet_layers" => counts.0 = Some(parse(key, v)?),
                "renet_patch" => {
                    patches = Some(v.split(',').map(|p| parse_patch(key, p)).collect::<Result<Vec<_>>>()?)
                }
                "renet_hidden" => hidden = Some(parse_list::<usize>(key, v)?),
                "renet_cell" => cells = Some(parse_list::<CellKind>(key, v)?),
                "fc_layers" => counts.1 = Some(parse(key, v)?),
                "fc_hidden" => fc_units = Some(parse_list::<usize>(key, v)?),
                "fc_activation" => {
                    fc_act = Some(
                        parse_list::<String>(key, v)?
                            .iter()
                            .map(|s| s.parse::<Activation>())
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "flip" => cfg.augment.flip = parse_bool(key, v)?,
                "shift" => cfg.augment.shift = parse_bool(key, v)?,
                "renet_dropout" => cfg.renet_dropout = parse(key, v)?,
                "fc_dropout" => cfg.fc_dropout = parse(key, v)?,
                "input_mask" => cfg.input_mask = parse(key, v)?,
                "zca_lambda" => cfg.zca_lambda = parse_opt(key, v)?,
                "standardize" => cfg.standardize = parse_bool(key, v)?,
                "learning_rate" => cfg.adam.learning_rate = parse(key, v)?,
                "beta1" => cfg.adam.beta1 = parse(key, v)?,
                "beta2" => cfg.adam.beta2 = parse(key, v)?,
                "epsilon" => cfg.adam.epsilon = parse(key, v)?,
                "clip_norm" => cfg.adam.clip_norm = parse_opt(key, v)?,
                "batch_size" => cfg.batch_size = parse(key, v)?,
                "patience" => cfg.patience = parse(key, v)?,
                "max_epochs" => cfg.max_epochs = parse(key, v)?,
                "seed" => cfg.seed = parse(key, v)?,
                "train_limit" => cfg.train_limit = parse_opt(key, v)?,
                other => return Err(Error::Config(format!("line {}: unknown key `{other}`", lineno + 1))),
            }
        }

        if patches.is_some() || hidden.is_some() || cells.is_some() {
            let (p, h, c) = (
                patches.unwrap_or_default(),
                hidden.unwrap_or_default(),
                cells.unwrap_or_default(),
            );
            let n = counts.0.unwrap_or(p.len());
            if p.len() != n || h.len() != n || c.len() != n {
                return Err(Error::Config(format!(
                    "renet_layers = {n} but renet_patch, renet_hidden, renet_cell list {}, {}, {} entries",
                    p.len(),
                    h.len(),
                    c.len()
                )));
            }
            cfg.renet = (0..n)
                .map(|i| LayerSpec {
                    patch: p[i],
                    hidden: h[i],
                    cell: c[i],
                })
                .collect();
        } else if let Some(n) = counts.0 {
            if n != cfg.renet.len() {
                return Err(Error::Config(format!("renet_layers = {n} without per-layer lists")));
            }
        }

        if fc_units.is_some() || fc_act.is_some() {
            let units = fc_units.unwrap_or_default();
            let n = counts.1.unwrap_or(units.len());
            let acts = fc_act.unwrap_or_else(|| vec![Activation::Relu; n]);
            if units.len() != n || acts.len() != n {
                return Err(Error::Config(format!(
                    "fc_layers = {n} but fc_hidden and fc_activation list {} and {} entries",
                    units.len(),
                    acts.len()
                )));
            }
            cfg.fc = units
                .into_iter()
                .zip(acts)
                .map(|(units, activation)| FcSpec { units, activation })
                .collect();
        } else if let Some(n) = counts.1 {
            if n != cfg.fc.len() {
                return Err(Error::Config(format!("fc_layers = {n} without per-layer lists")));
            }
        }

        cfg.validate()?;
        Ok(cfg)
    }
}
