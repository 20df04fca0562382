use std::path::Path;

use super::ModelConfig;
use crate::data::{bars_dataset, load_cifar10, load_mnist, load_svhn, DatasetTriple, Preprocessing, Split};
use crate::error::{Error, Result};
use crate::numerics::Scalar;

/// Sizes of the synthetic bars splits.
pub const BARS_SAMPLES: usize = 50;

/// Loads the dataset named by `cfg.dataset` from `dir` (ignored for the
/// synthetic set), truncates the training split to `cfg.train_limit`, then
/// fits preprocessing on the training split and applies it to all three.
pub fn prepare_data<T: Scalar>(cfg: &ModelConfig, dir: Option<&Path>) -> Result<(DatasetTriple<T>, Preprocessing)> {
    let need_dir = || dir.ok_or_else(|| Error::Config(format!("dataset `{}` needs a data directory", cfg.dataset)));
    let mut raw = match cfg.dataset.as_str() {
        "mnist" => load_mnist::<T>(need_dir()?)?,
        "cifar10" => load_cifar10::<T>(need_dir()?)?,
        "svhn" => load_svhn::<T>(need_dir()?, cfg.seed)?,
        "bars" => {
            let size = cfg.input.0;
            DatasetTriple {
                train: bars_dataset(BARS_SAMPLES, size, cfg.seed)?,
                valid: relabel(bars_dataset(BARS_SAMPLES, size, cfg.seed.wrapping_add(1))?, Split::Valid),
                test: relabel(bars_dataset(BARS_SAMPLES, size, cfg.seed.wrapping_add(2))?, Split::Test),
            }
        }
        other => return Err(Error::Config(format!("unknown dataset `{other}`"))),
    };
    if let Some(n) = cfg.train_limit {
        raw.train = raw.train.head(n)?;
    }
    let prep = Preprocessing::fit(&raw.train, cfg.zca_lambda, cfg.standardize)?;
    let data = DatasetTriple {
        train: prep.apply(&raw.train)?,
        valid: prep.apply(&raw.valid)?,
        test: prep.apply(&raw.test)?,
    };
    Ok((data, prep))
}

fn relabel<T>(mut d: crate::data::Dataset<T>, split: Split) -> crate::data::Dataset<T> {
    d.split = split;
    d
}
