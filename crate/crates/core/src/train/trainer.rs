use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::checkpoint::{best_path, Checkpoint};
use super::{append_metrics, EpochRecord, Model, ModelConfig, Noise};
use crate::classifier::{argmax, softmax_nll};
use crate::data::{AugmentPlan, Dataset, DatasetTriple};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Scalar};
use crate::optimizer::AdamState;

/// Samples per gradient work unit. Chunk gradients are summed in chunk order,
/// so results do not depend on the thread count.
pub const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub error: f64,
    pub nll: f64,
    pub predictions: Vec<usize>,
}

/// Dropout-free error rate and mean NLL.
pub fn evaluate<T: Scalar>(model: &Model<T>, data: &Dataset<T>) -> Result<EvalReport> {
    let per_sample: Vec<Result<(usize, f64)>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let logits = model.logits(&data.image(i))?;
            let (nll, _) = softmax_nll(&logits, data.labels[i])?;
            Ok((argmax(&logits), nll))
        })
        .collect();
    let mut predictions = Vec::with_capacity(data.len());
    let mut nll = 0.0;
    for r in per_sample {
        let (p, l) = r?;
        predictions.push(p);
        nll += l;
    }
    let wrong = predictions.iter().zip(&data.labels).filter(|(p, l)| p != l).count();
    let n = data.len().max(1) as f64;
    Ok(EvalReport {
        error: wrong as f64 / n,
        nll: nll / n,
        predictions,
    })
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Latest state goes here, the best-on-validation state to `<path>.best`.
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_error: f64,
    pub best_model: Model<T>,
    pub final_model: Model<T>,
}

/// Mutable state of a training run.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub config: ModelConfig,
    pub model: Model<T>,
    pub adam: AdamState<T>,
    pub rng: Rng,
    pub epoch: usize,
    pub best_error: f64,
    pub best_epoch: Option<usize>,
    pub since_best: usize,
    pub history: Vec<EpochRecord>,
    pub best_model: Model<T>,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh run: parameters from stream 0 of the seed, epoch randomness
    /// from stream 1.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let model = Model::build(config, &mut Rng::with_stream(config.seed, 0))?;
        let adam = AdamState::new(config.adam, model.tensors());
        Ok(Self {
            config: config.clone(),
            best_model: model.clone(),
            model,
            adam,
            rng: Rng::with_stream(config.seed, 1),
            epoch: 0,
            best_error: f64::INFINITY,
            best_epoch: None,
            since_best: 0,
            history: Vec::new(),
        })
    }

    pub fn should_stop(&self) -> bool {
        self.epoch >= self.config.max_epochs || (self.best_epoch.is_some() && self.since_best >= self.config.patience)
    }

    /// One pass over `train` in a seeded order, then validation.
    pub fn run_epoch(&mut self, train: &Dataset<T>, valid: &Dataset<T>) -> Result<EpochRecord> {
        let start = Instant::now();
        let epoch = self.epoch + 1;
        let epoch_seed = self.rng.next_u64();
        let mut order: Vec<usize> = (0..train.len()).collect();
        Rng::with_stream(epoch_seed, 0).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut wrong = 0usize;
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let offset = b * self.config.batch_size;
            let (mut grads, loss, errs) = self.batch_gradients(train, batch, epoch_seed, offset)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            grads.scale(T::from_f64(1.0 / batch.len() as f64));
            let mut params = self.model.tensors_mut();
            let grads = grads.tensors();
            self.adam.apply(&mut params, &grads)?;
            loss_sum += loss;
            wrong += errs;
        }

        let report = evaluate(&self.model, valid)?;
        self.epoch = epoch;
        if report.error < self.best_error {
            self.best_error = report.error;
            self.best_epoch = Some(epoch);
            self.since_best = 0;
            self.best_model = self.model.clone();
        } else {
            self.since_best += 1;
        }
        let n = train.len().max(1) as f64;
        let record = EpochRecord {
            epoch,
            train_nll: loss_sum / n,
            train_error: wrong as f64 / n,
            valid_error: report.error,
            valid_nll: report.nll,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        self.history.push(record.clone());
        Ok(record)
    }

    /// Summed gradients, summed loss and misclassification count of
    /// `batch`; sample `k` of the batch draws its noise from stream
    /// `offset + k + 1` of the epoch seed.
    fn batch_gradients(&self, train: &Dataset<T>, batch: &[usize], epoch_seed: u64, offset: usize) -> Result<(Model<T>, f64, usize)> {
        let chunks: Vec<(usize, &[usize])> = batch.chunks(CHUNK).enumerate().map(|(c, s)| (offset + c * CHUNK, s)).collect();
        let wave = rayon::current_num_threads().max(1);
        let mut total: Option<(Model<T>, f64, usize)> = None;
        for group in chunks.chunks(wave) {
            let results: Vec<Result<(Model<T>, f64, usize)>> = group
                .par_iter()
                .map(|&(start, samples)| {
                    let mut g = self.model.zeros_like();
                    let mut loss = 0.0;
                    let mut wrong = 0;
                    for (k, &i) in samples.iter().enumerate() {
                        let mut rng = Rng::with_stream(epoch_seed, (start + k) as u64 + 1);
                        let x = AugmentPlan::draw(&mut rng, self.config.augment).apply(&train.image(i));
                        let noise = Noise::from_config(&self.config, &mut rng);
                        let (l, logits) = self.model.loss_and_grad(&x, train.labels[i], Some(noise), &mut g)?;
                        loss += l;
                        wrong += usize::from(argmax(&logits) != train.labels[i]);
                    }
                    Ok((g, loss, wrong))
                })
                .collect();
            for r in results {
                let (g, l, w) = r?;
                match &mut total {
                    None => total = Some((g, l, w)),
                    Some((tg, tl, tw)) => {
                        tg.accumulate(&g);
                        *tl += l;
                        *tw += w;
                    }
                }
            }
        }
        Ok(total.unwrap_or_else(|| (self.model.zeros_like(), 0.0, 0)))
    }

    fn registry(model: &Model<T>, adam: &AdamState<T>) -> Vec<(String, crate::numerics::Tensor<T>)> {
        let mut out: Vec<_> = model.tensors().into_iter().map(|(n, t)| (format!("param/{n}"), t.clone())).collect();
        for m in &adam.moments {
            out.push((format!("adam.m/{}", m.name), m.m.clone()));
            out.push((format!("adam.v/{}", m.name), m.v.clone()));
        }
        out
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            config: self.config.clone(),
            epoch: self.epoch,
            best_error: self.best_error,
            best_epoch: self.best_epoch,
            since_best: self.since_best,
            rng: self.rng.state(),
            adam_step: self.adam.step,
            history: self.history.clone(),
            tensors: Self::registry(&self.model, &self.adam),
        }
    }

    fn best_checkpoint(&self) -> Checkpoint<T> {
        let mut c = self.checkpoint();
        c.tensors = self.best_model.tensors().into_iter().map(|(n, t)| (format!("param/{n}"), t.clone())).collect();
        c
    }

    /// Resumes from `path`. The stored config must describe the same run as
    /// `config`, except for `max_epochs`.
    pub fn resume(path: &Path, config: &ModelConfig) -> Result<Self> {
        let ckpt = Checkpoint::<T>::load(path)?;
        if !ckpt.config.same_run(config) {
            return Err(Error::Checkpoint(format!(
                "{} was written by a different configuration; refusing to resume",
                path.display()
            )));
        }
        let mut t = Self::new(config)?;
        load_params(&mut t.model, &ckpt)?;
        t.adam.step = ckpt.adam_step;
        for m in &mut t.adam.moments {
            for (prefix, dst) in [("adam.m", &mut m.m), ("adam.v", &mut m.v)] {
                let key = format!("{prefix}/{}", m.name);
                let src = ckpt.tensor(&key).ok_or_else(|| Error::Checkpoint(format!("missing `{key}`")))?;
                if src.shape() != dst.shape() {
                    return Err(Error::shape("checkpoint moment", src.shape(), dst.shape()));
                }
                *dst = src.clone();
            }
        }
        t.rng = Rng::from_state(ckpt.rng);
        t.epoch = ckpt.epoch;
        t.best_error = ckpt.best_error;
        t.best_epoch = ckpt.best_epoch;
        t.since_best = ckpt.since_best;
        t.history = ckpt.history;
        t.best_model = t.model.clone();
        if t.best_epoch.is_some_and(|e| e != t.epoch) {
            let best = Checkpoint::<T>::load(&best_path(path))?;
            load_params(&mut t.best_model, &best)?;
        }
        Ok(t)
    }
}

/// Copies `param/<name>` tensors of `ckpt` into `model`.
pub fn load_params<T: Scalar>(model: &mut Model<T>, ckpt: &Checkpoint<T>) -> Result<()> {
    for (name, dst) in model.tensors_mut() {
        let key = format!("param/{name}");
        let src = ckpt.tensor(&key).ok_or_else(|| Error::Checkpoint(format!("missing `{key}`")))?;
        if src.shape() != dst.shape() {
            return Err(Error::shape("checkpoint parameter", src.shape(), dst.shape()));
        }
        *dst = src.clone();
    }
    Ok(())
}

/// Model stored in a checkpoint file.
pub fn load_model<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let ckpt = Checkpoint::<T>::load(path)?;
    let mut model = Model::zeros(&ckpt.config)?;
    load_params(&mut model, &ckpt)?;
    Ok(model)
}

fn check_geometry<T: Scalar>(cfg: &ModelConfig, data: &Dataset<T>) -> Result<()> {
    let m = &data.meta;
    if (m.width, m.height, m.channels) != cfg.input || m.classes != cfg.classes {
        return Err(Error::Config(format!(
            "dataset `{}` is {}x{}x{} with {} classes, config expects {:?} with {}",
            m.name, m.width, m.height, m.channels, m.classes, cfg.input, cfg.classes
        )));
    }
    Ok(())
}

/// Trains until early stopping or the epoch budget, calling `on_epoch`
/// after each epoch. `data` must already be preprocessed.
pub fn train_loop<T: Scalar>(
    config: &ModelConfig,
    data: &DatasetTriple<T>,
    options: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    check_geometry(config, &data.train)?;
    let train = match config.train_limit {
        Some(n) => data.train.head(n)?,
        None => data.train.clone(),
    };
    let mut trainer = match (&options.checkpoint, options.resume) {
        (Some(path), true) => Trainer::resume(path, config)?,
        (None, true) => return Err(Error::Config("resume requested without a checkpoint path".into())),
        _ => Trainer::new(config)?,
    };
    while !trainer.should_stop() {
        let record = match trainer.run_epoch(&train, &data.valid) {
            Ok(r) => r,
            Err(e @ (Error::NonFiniteLoss { .. } | Error::NonFiniteGradient(_))) => {
                if let Some(path) = &options.checkpoint {
                    let mut p = path.as_os_str().to_owned();
                    p.push(".nonfinite");
                    trainer.checkpoint().save(Path::new(&p))?;
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        if let Some(path) = &options.checkpoint {
            if trainer.best_epoch == Some(trainer.epoch) {
                trainer.best_checkpoint().save(&best_path(path))?;
            }
            trainer.checkpoint().save(path)?;
        }
        if let Some(m) = &options.metrics {
            append_metrics(m, &record)?;
        }
        on_epoch(&record);
    }
    Ok(TrainOutcome {
        history: trainer.history,
        best_epoch: trainer.best_epoch.unwrap_or(0),
        best_valid_error: trainer.best_error,
        best_model: trainer.best_model,
        final_model: trainer.model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{bars_dataset, Split};

    fn small_cfg() -> ModelConfig {
        let mut c: ModelConfig = "input = 4,4,1\nclasses = 2\nrenet_patch = 2x2\nrenet_hidden = 3\nrenet_cell = gru\nbatch_size = 5"
            .parse()
            .unwrap();
        c.max_epochs = 3;
        c
    }

    fn triple(n: usize) -> DatasetTriple<f64> {
        let d = bars_dataset::<f64>(n, 4, 1).unwrap();
        DatasetTriple {
            train: d.clone(),
            valid: d.head(6).unwrap().select(&[0, 1, 2, 3, 4, 5], Split::Valid).unwrap(),
            test: d.head(4).unwrap(),
        }
    }

    #[test]
    fn patience_zero_runs_one_epoch() {
        let mut c = small_cfg();
        c.patience = 0;
        let out = train_loop(&c, &triple(12), &TrainOptions::default(), |_| {}).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn best_is_never_worse_than_seen() {
        let mut c = small_cfg();
        c.max_epochs = 6;
        c.patience = 100;
        let out = train_loop(&c, &triple(12), &TrainOptions::default(), |_| {}).unwrap();
        let min = out.history.iter().map(|r| r.valid_error).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_valid_error, min);
        let first = out.history.iter().position(|r| r.valid_error == min).unwrap();
        assert_eq!(out.best_epoch, first + 1);
        let re = evaluate(&out.best_model, &triple(12).valid).unwrap();
        assert_eq!(re.error, min);
    }

    #[test]
    fn evaluation_is_repeatable_and_recountable() {
        let d = triple(10);
        let m = Model::<f64>::build(&small_cfg(), &mut Rng::new(3)).unwrap();
        let a = evaluate(&m, &d.train).unwrap();
        let b = evaluate(&m, &d.train).unwrap();
        assert_eq!(a, b);
        let wrong = (0..d.train.len()).filter(|&i| argmax(&m.logits(&d.train.image(i)).unwrap()) != d.train.labels[i]).count();
        assert_eq!(a.error, wrong as f64 / 10.0);
    }

    #[test]
    fn zero_output_layer_predicts_uniformly() {
        let d = triple(10);
        let mut m = Model::<f64>::build(&small_cfg(), &mut Rng::new(3)).unwrap();
        let last = m.fc.len() - 1;
        m.fc[last].weights.fill(0.0);
        m.fc[last].bias.fill(0.0);
        let r = evaluate(&m, &d.train).unwrap();
        assert!((r.nll - 2f64.ln()).abs() < 1e-12);
        assert!((r.error - 0.5).abs() < 1e-12);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let c = small_cfg();
        let d = triple(20);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train_loop(&c, &d, &TrainOptions::default(), |_| {}).unwrap())
        };
        let (a, b) = (run(1), run(3));
        assert_eq!(a.final_model, b.final_model);
        assert!(a.history.iter().zip(&b.history).all(|(x, y)| x.same_metrics(y)));
    }

    #[test]
    fn resume_refuses_other_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.rnck");
        let c = small_cfg();
        let opts = TrainOptions {
            checkpoint: Some(path.clone()),
            ..Default::default()
        };
        train_loop(&c, &triple(10), &opts, |_| {}).unwrap();
        let mut other = c.clone();
        other.seed = 99;
        assert!(matches!(Trainer::<f64>::resume(&path, &other), Err(Error::Checkpoint(_))));
        let mut longer = c.clone();
        longer.max_epochs = 10;
        assert!(Trainer::<f64>::resume(&path, &longer).is_ok());
    }

    #[test]
    fn geometry_mismatch_is_reported() {
        let mut c = small_cfg();
        c.input = (8, 8, 1);
        assert!(train_loop(&c, &triple(10), &TrainOptions::default(), |_| {}).is_err());
    }
}
