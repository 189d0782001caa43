//! Training protocol: per-class split, shuffled mini-batches, Adam with a
//! step-halving schedule, evaluation and seeded repeats.

mod config;
mod optim;

pub use config::{ExperimentSpec, RunConfig, INDIAN_PINES_TRAIN_COUNTS};
pub use optim::Adam;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::data::{ConfusionMatrix, HsiCube, Metrics};
use crate::error::{contract_err, Error, Result};
use crate::model::{argmax, Model};
use crate::tensor::ParamStore;

/// Independent random streams, one per purpose.
const STREAM_SPLIT: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;

/// Samples per gradient work unit; units are summed in a fixed order so the
/// result does not depend on the thread count.
const GRAD_CHUNK: usize = 8;

pub(crate) fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

/// `lr0 · 0.5^floor(epoch / lr_halve_every)`
pub fn lr_at(epoch: usize, cfg: &RunConfig) -> f64 {
    let halvings = (epoch / cfg.lr_halve_every.max(1)).min(1074) as i32;
    cfg.lr0 * 0.5f64.powi(halvings)
}

/// Pixel indices (`row·w + col`) used for training and for testing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Draws `counts[c]` pixels of every class uniformly without replacement;
/// the remaining labelled pixels form the test set (ascending order).
pub fn split_dataset(cube: &HsiCube, counts: &[usize], seed: u64) -> Result<Split> {
    if counts.len() != cube.classes() {
        return contract_err(format!(
            "{} counts for {} classes",
            counts.len(),
            cube.classes()
        ));
    }
    let mut rng = stream(seed, STREAM_SPLIT);
    let mut train = Vec::new();
    let mut in_train = vec![false; cube.labels().len()];
    for (c, &n) in counts.iter().enumerate() {
        let mut pixels = cube.pixels_of_class(c as u32 + 1);
        if n > pixels.len() {
            return contract_err(format!(
                "class {} ({}) has {} labelled pixels, {n} requested for training",
                c + 1,
                cube.class_names()[c],
                pixels.len()
            ));
        }
        let (chosen, _) = pixels.partial_shuffle(&mut rng, n);
        for &i in chosen.iter() {
            in_train[i] = true;
        }
        train.extend_from_slice(chosen);
    }
    let test = (0..cube.labels().len())
        .filter(|&i| cube.labels()[i] > 0 && !in_train[i])
        .collect();
    Ok(Split { train, test })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-sample loss over the epoch's batches, measured before each update.
    pub loss: f64,
    pub metrics: Option<Metrics>,
}

/// Optimization state for one run.
pub struct Trainer {
    cfg: RunConfig,
    cube: HsiCube,
    split: Split,
    model: Model,
    adam: Adam,
    epoch: usize,
    step: u64,
    shuffle: ChaCha8Rng,
    history: Vec<EpochRecord>,
    step_losses: Vec<f64>,
}

impl Trainer {
    /// Normalizes the scene, draws the split and initializes the model.
    pub fn new(cube: &HsiCube, cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let model_cfg = cfg.model_config(cube.bands(), cube.classes());
        let split = split_dataset(cube, &cfg.train_counts(cube.classes())?, cfg.seed)?;
        let model = Model::init(model_cfg, &mut stream(cfg.seed, STREAM_INIT))?;
        let adam = Adam::new(
            model.params(),
            cfg.beta1,
            cfg.beta2,
            cfg.adam_eps,
            cfg.weight_decay,
        );
        Ok(Trainer {
            shuffle: stream(cfg.seed, STREAM_SHUFFLE),
            cube: cube.normalized(),
            cfg,
            split,
            model,
            adam,
            epoch: 0,
            step: 0,
            history: Vec::new(),
            step_losses: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    /// The normalized scene the model sees.
    pub fn cube(&self) -> &HsiCube {
        &self.cube
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    /// Batch-mean loss of every optimizer step so far.
    pub fn step_losses(&self) -> &[f64] {
        &self.step_losses
    }

    fn sample(&self, pixel: usize) -> (crate::tensor::Tensor, usize) {
        let w = self.cube.width();
        let win = self
            .cube
            .extract_window(pixel / w, pixel % w, self.cfg.window);
        (win, self.cube.labels()[pixel] as usize - 1)
    }

    /// Summed loss and gradients over `pixels`, in order.
    fn chunk_grads(&self, pixels: &[usize]) -> Result<(f64, ParamStore)> {
        let mut total = self.model.params().zeros_like();
        let mut loss = 0.0;
        for &p in pixels {
            let (win, label) = self.sample(p);
            let (l, _, g) = self.model.loss_and_grads(&win, label)?;
            loss += l;
            total.accumulate(&g);
        }
        Ok((loss, total))
    }

    /// One Adam update on the mean loss of `batch`; returns that loss.
    pub fn train_step(&mut self, batch: &[usize], batch_index: usize) -> Result<f64> {
        if batch.is_empty() {
            return contract_err("empty batch");
        }
        let diverged = |step: u64, loss: f64, max_grad: f64| Error::Diverged {
            step,
            batch: batch_index,
            loss,
            max_grad,
        };
        let parts: Vec<Result<(f64, ParamStore)>> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|c| self.chunk_grads(c))
            .collect();
        let mut loss = 0.0;
        let mut grads = self.model.params().zeros_like();
        for part in parts {
            match part {
                Ok((l, g)) => {
                    loss += l;
                    grads.accumulate(&g);
                }
                Err(Error::Numeric(_)) => return Err(diverged(self.step, f64::NAN, f64::NAN)),
                Err(e) => return Err(e),
            }
        }
        let n = batch.len() as f64;
        loss /= n;
        grads.scale(1.0 / n);
        let max_grad = grads.max_abs();
        if !loss.is_finite() || !max_grad.is_finite() {
            return Err(diverged(self.step, loss, max_grad));
        }
        let lr = lr_at(self.epoch, &self.cfg);
        self.adam.step(self.model.params_mut(), &grads, lr);
        if !self.model.params().max_abs().is_finite() {
            return Err(diverged(self.step, loss, max_grad));
        }
        self.step += 1;
        self.step_losses.push(loss);
        Ok(loss)
    }

    /// One pass over the shuffled training set; the last batch may be short.
    pub fn train_epoch(&mut self) -> Result<EpochRecord> {
        let mut order = self.split.train.clone();
        order.shuffle(&mut self.shuffle);
        let lr = lr_at(self.epoch, &self.cfg);
        let mut sum = 0.0;
        for (i, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            sum += self.train_step(batch, i)? * batch.len() as f64;
        }
        let loss = if order.is_empty() {
            0.0
        } else {
            sum / order.len() as f64
        };
        let e = self.cfg.eval_every;
        let metrics = if e > 0 && (self.epoch + 1).is_multiple_of(e) && !self.split.test.is_empty()
        {
            Some(self.evaluate(&self.split.test)?.metrics()?)
        } else {
            None
        };
        let rec = EpochRecord {
            epoch: self.epoch,
            lr,
            loss,
            metrics,
        };
        self.epoch += 1;
        self.history.push(rec.clone());
        Ok(rec)
    }

    /// Trains until `cfg.epochs` epochs are done.
    pub fn run(&mut self) -> Result<()> {
        while self.epoch < self.cfg.epochs {
            self.train_epoch()?;
        }
        Ok(())
    }

    pub fn predict(&self, pixels: &[usize]) -> Result<Vec<usize>> {
        pixels
            .par_iter()
            .map(|&p| {
                let w = self.cube.width();
                let win = self.cube.extract_window(p / w, p % w, self.cfg.window);
                Ok(argmax(&self.model.logits(&win)?))
            })
            .collect()
    }

    pub fn evaluate(&self, pixels: &[usize]) -> Result<ConfusionMatrix> {
        let preds = self.predict(pixels)?;
        let truth = pixels.iter().map(|&p| self.cube.labels()[p] as usize - 1);
        ConfusionMatrix::from_pairs(self.cube.classes(), truth.zip(preds))
    }

    /// `epoch,lr,loss,oa,aa,kappa`; metric fields are empty for epochs
    /// without evaluation.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,lr,loss,oa,aa,kappa\n");
        for r in &self.history {
            let _ = write!(out, "{},{},{}", r.epoch, r.lr, r.loss);
            match &r.metrics {
                Some(m) => {
                    let _ = writeln!(out, ",{},{},{}", m.oa, m.aa, m.kappa);
                }
                None => out.push_str(",,,\n"),
            }
        }
        out
    }

    /// Full state: parameters, Adam moments, counters, shuffle stream
    /// position and loss history.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.put_u64s("meta.bands", &[self.cube.bands() as u64]);
        ck.put_u64s("meta.classes", &[self.cube.classes() as u64]);
        ck.put_u64s("seed", &[self.cfg.seed]);
        ck.put_u64s("epoch", &[self.epoch as u64]);
        ck.put_u64s("step", &[self.step]);
        ck.put_u64s("adam.t", &[self.adam.t]);
        let pos = self.shuffle.get_word_pos();
        ck.put_u64s("rng.shuffle", &[(pos >> 64) as u64, pos as u64]);
        ck.put_f64s("history.step_loss", &self.step_losses);
        let epoch_loss: Vec<f64> = self.history.iter().map(|r| r.loss).collect();
        ck.put_f64s("history.epoch_loss", &epoch_loss);
        ck.put_f64s("history.metrics", &self.metrics_rows());
        ck.put_params("param.", self.model.params());
        ck.put_params("adam.m.", &self.adam.m);
        ck.put_params("adam.v.", &self.adam.v);
        ck
    }

    /// Per epoch `oa, aa, kappa, per_class…`; NaN throughout when the epoch
    /// was not evaluated.
    fn metrics_rows(&self) -> Vec<f64> {
        let width = 3 + self.cube.classes();
        let mut out = Vec::with_capacity(self.history.len() * width);
        for r in &self.history {
            match &r.metrics {
                Some(m) => {
                    out.extend([m.oa, m.aa, m.kappa]);
                    out.extend(&m.per_class);
                }
                None => out.extend(std::iter::repeat_n(f64::NAN, width)),
            }
        }
        out
    }

    /// Continues a run from [`Trainer::to_checkpoint`].
    pub fn resume(cube: &HsiCube, cfg: RunConfig, ck: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(cube, cfg)?;
        if ck.u64("meta.bands")? != cube.bands() as u64
            || ck.u64("meta.classes")? != cube.classes() as u64
        {
            return Err(Error::Format(
                "checkpoint was written for a different scene geometry".into(),
            ));
        }
        if ck.u64("seed")? != t.cfg.seed {
            return Err(Error::Config(
                "checkpoint seed differs from the run config".into(),
            ));
        }
        let params = ck.params_like("param.", t.model.params())?;
        t.model = Model::from_params(*t.model.config(), params)?;
        t.adam.m = ck.params_like("adam.m.", &t.adam.m)?;
        t.adam.v = ck.params_like("adam.v.", &t.adam.v)?;
        t.adam.t = ck.u64("adam.t")?;
        t.epoch = ck.u64("epoch")? as usize;
        t.step = ck.u64("step")?;
        let pos = ck.u64s("rng.shuffle")?;
        if pos.len() != 2 {
            return Err(Error::Format("rng.shuffle must hold two words".into()));
        }
        t.shuffle
            .set_word_pos(((pos[0] as u128) << 64) | pos[1] as u128);
        t.step_losses = ck.f64s("history.step_loss")?;
        let losses = ck.f64s("history.epoch_loss")?;
        let rows = ck.f64s("history.metrics")?;
        let width = 3 + cube.classes();
        if rows.len() != losses.len() * width {
            return Err(Error::Format(
                "history.metrics does not match the epoch history".into(),
            ));
        }
        t.history = losses
            .into_iter()
            .zip(rows.chunks_exact(width))
            .enumerate()
            .map(|(epoch, (loss, row))| {
                let metrics = (!row[0].is_nan()).then(|| Metrics {
                    oa: row[0],
                    aa: row[1],
                    kappa: row[2],
                    per_class: row[3..].to_vec(),
                });
                EpochRecord {
                    epoch,
                    lr: lr_at(epoch, &t.cfg),
                    loss,
                    metrics,
                }
            })
            .collect();
        Ok(t)
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepeatedEval {
    pub runs: Vec<Metrics>,
    pub oa: (f64, f64),
    pub aa: (f64, f64),
    pub kappa: (f64, f64),
}

impl RepeatedEval {
    pub fn from_runs(runs: Vec<Metrics>) -> Result<Self> {
        if runs.is_empty() {
            return contract_err("no runs to aggregate");
        }
        let col = |f: fn(&Metrics) -> f64| mean_std(&runs.iter().map(f).collect::<Vec<_>>());
        Ok(RepeatedEval {
            oa: col(|m| m.oa),
            aa: col(|m| m.aa),
            kappa: col(|m| m.kappa),
            runs,
        })
    }
}

/// Split, train and test with seeds `cfg.seed .. cfg.seed + repeats`.
pub fn repeated_eval(cube: &HsiCube, cfg: &RunConfig, repeats: usize) -> Result<RepeatedEval> {
    if repeats == 0 {
        return contract_err("repeats must be at least 1");
    }
    let mut runs = Vec::with_capacity(repeats);
    for i in 0..repeats {
        let run_cfg = RunConfig {
            seed: cfg.seed + i as u64,
            ..cfg.clone()
        };
        let mut t = Trainer::new(cube, run_cfg)?;
        t.run()?;
        runs.push(t.evaluate(&t.split.test)?.metrics()?);
    }
    RepeatedEval::from_runs(runs)
}
