//! Training, evaluation, timing and comparison runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use grepsnet::autodiff::{Optimizer, Tape};
use grepsnet::layers::{build_model, mse_loss, save_checkpoint, FeatureBatch, Model};
use grepsnet::tasks::{argmax, generate, Dataset, Task};
use grepsnet::Error;

use crate::{HarnessError, RunConfig};

pub const METRICS_HEADER: &str = "epoch,train_loss,test_loss,epoch_time_seconds,lr";

/// Rows evaluated per forward pass when scoring a dataset.
const EVAL_CHUNK: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub epoch_time_seconds: f64,
    pub lr: f64,
}

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{:.9e},{:.9e},{:.6},{:.6e}",
            self.epoch, self.train_loss, self.test_loss, self.epoch_time_seconds, self.lr
        )
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path).map_err(Error::from)?);
    writeln!(w, "{METRICS_HEADER}").map_err(Error::from)?;
    for r in rows {
        writeln!(w, "{}", r.csv()).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

/// Train and test splits of `config`'s task.
pub fn datasets(config: &RunConfig) -> Result<(Dataset, Dataset), HarnessError> {
    let all = generate(
        config.task,
        config.train_size + config.test_size,
        config.data_seed,
        &config.gen_options(),
    )?;
    Ok(all.split(config.train_size))
}

pub struct Batches {
    pub inputs: FeatureBatch,
    pub targets: FeatureBatch,
}

impl Batches {
    pub fn new(ds: &Dataset) -> Result<Self, HarnessError> {
        Ok(Self {
            inputs: FeatureBatch::from_features(&ds.inputs)?,
            targets: FeatureBatch::from_features(&ds.targets)?,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> (FeatureBatch, FeatureBatch) {
        (self.inputs.select(idx), self.targets.select(idx))
    }
}

pub struct TrainOutcome {
    pub metrics: Vec<MetricsRow>,
    /// Model at the epoch with the lowest test loss.
    pub best: Box<dyn Model>,
    pub best_test_loss: f64,
    pub final_test_loss: f64,
}

/// One optimizer step on `(x, y)`; returns the batch loss.
fn step(model: &mut dyn Model, opt: &mut Optimizer, x: &FeatureBatch, y: &FeatureBatch) -> Result<f64, HarnessError> {
    let tape = Tape::new();
    let p = model.params().on_tape(&tape);
    let out = model.forward(&tape, &p, x)?;
    let loss = mse_loss(&tape, &out, y)?;
    let value = loss.item();
    if !value.is_finite() {
        let (node, op) = tape.first_non_finite().unwrap_or((loss.id(), "loss"));
        return Err(Error::NonFinite { op, node }.into());
    }
    tape.backward(loss)?;
    let grads: Vec<_> = p.iter().map(|v| v.grad()).collect();
    drop(p);
    opt.step(model.params_mut().tensors_mut(), &grads)?;
    Ok(value)
}

/// Mean squared error of `model` over `data`.
pub fn mse(model: &dyn Model, data: &Batches) -> Result<f64, HarnessError> {
    let n = data.len();
    let mut sum = 0.0;
    let mut count = 0usize;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
        let (x, y) = data.select(&idx);
        let pred = model.predict(&x)?;
        for (a, b) in pred.flatten().iter().zip(y.flatten()) {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    Ok(sum / count.max(1) as f64)
}

/// Trains `config` and writes its metrics CSV and checkpoint when paths are set.
pub fn train(config: &RunConfig) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    let (train_ds, test_ds) = datasets(config)?;
    train_on(config, &Batches::new(&train_ds)?, &Batches::new(&test_ds)?)
}

/// Runs one training epoch and returns the mean batch loss.
fn epoch(
    model: &mut dyn Model,
    opt: &mut Optimizer,
    train: &Batches,
    batch_size: usize,
    order: &mut [usize],
    rng: &mut ChaCha8Rng,
) -> Result<f64, HarnessError> {
    let n = train.len();
    if batch_size == 0 || batch_size >= n {
        return step(model, opt, &train.inputs, &train.targets);
    }
    order.shuffle(rng);
    let mut total = 0.0;
    for chunk in order.chunks(batch_size) {
        let (x, y) = train.select(chunk);
        total += step(model, opt, &x, &y)? * chunk.len() as f64;
    }
    Ok(total / n as f64)
}

pub fn train_on(config: &RunConfig, train: &Batches, test: &Batches) -> Result<TrainOutcome, HarnessError> {
    let spec = config.model_spec()?;
    let mut model = build_model(&spec, config.seed)?;
    let mut opt = Optimizer::new(config.optimizer, config.lr, config.scheduler);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba7c);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut best_params = model.params().flatten();
    let mut best_test = mse(model.as_ref(), test)?;
    let mut final_test = best_test;
    for e in 0..config.epochs {
        opt.set_epoch(e);
        let lr = opt.lr();
        let t0 = Instant::now();
        let train_loss = epoch(model.as_mut(), &mut opt, train, config.batch_size, &mut order, &mut rng)?;
        let elapsed = t0.elapsed().as_secs_f64();
        let test_loss = mse(model.as_ref(), test)?;
        if test_loss < best_test {
            best_test = test_loss;
            best_params = model.params().flatten();
        }
        final_test = test_loss;
        metrics.push(MetricsRow {
            epoch: e,
            train_loss,
            test_loss,
            epoch_time_seconds: elapsed,
            lr,
        });
    }
    let mut best = build_model(&spec, config.seed)?;
    best.params_mut().load_flat(&best_params)?;
    if let Some(path) = &config.metrics {
        write_metrics(path, &metrics)?;
    }
    if let Some(path) = &config.checkpoint {
        save_checkpoint(best.as_ref(), path)?;
    }
    Ok(TrainOutcome {
        metrics,
        best,
        best_test_loss: best_test,
        final_test_loss: final_test,
    })
}

/// Task-specific scores of a trained model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub mse: f64,
    /// `‖pred − target‖_F / ‖target‖_F` summed over the set (inertia).
    pub relative_frobenius: f64,
    /// Fraction of correct argmax classes (rotpat), else NaN.
    pub accuracy: f64,
}

pub fn evaluate(model: &dyn Model, data: &Batches) -> Result<EvalReport, HarnessError> {
    let pred = model.predict(&data.inputs)?;
    let flat = pred.flatten();
    let target = data.targets.flatten();
    let n = data.len();
    let sq: f64 = flat.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum();
    let tnorm: f64 = target.iter().map(|b| b * b).sum();
    let accuracy = if model.spec().task == Task::RotPat {
        // One [classes, B] block: column b holds sample b's scores.
        let (p, t) = (pred.blocks()[0].data(), data.targets.blocks()[0].data());
        let k = p.len() / n.max(1);
        let col = |d: &[f64], b: usize| (0..k).map(|r| d[r * n + b]).collect::<Vec<_>>();
        let hits = (0..n).filter(|&b| argmax(&col(p, b)) == argmax(&col(t, b))).count();
        hits as f64 / n.max(1) as f64
    } else {
        f64::NAN
    };
    Ok(EvalReport {
        mse: sq / flat.len().max(1) as f64,
        relative_frobenius: (sq / tnorm.max(f64::MIN_POSITIVE)).sqrt(),
        accuracy,
    })
}

/// Median wall-clock seconds of the training epoch over `measured` epochs
/// after `warmup` discarded ones.
pub fn bench_epoch(config: &RunConfig, warmup: usize, measured: usize) -> Result<f64, HarnessError> {
    config.validate()?;
    let (train_ds, _) = datasets(config)?;
    let train = Batches::new(&train_ds)?;
    let mut model = build_model(&config.model_spec()?, config.seed)?;
    let mut opt = Optimizer::new(config.optimizer, config.lr, config.scheduler);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut times = Vec::with_capacity(measured);
    for e in 0..warmup + measured {
        let t0 = Instant::now();
        epoch(model.as_mut(), &mut opt, &train, config.batch_size, &mut order, &mut rng)?;
        if e >= warmup {
            times.push(t0.elapsed().as_secs_f64());
        }
    }
    Ok(median(&mut times))
}

/// Median seconds of one forward pass over `batch` training samples.
pub fn bench_forward(config: &RunConfig, batch: usize, repeats: usize) -> Result<f64, HarnessError> {
    let (train_ds, _) = datasets(config)?;
    let train = Batches::new(&train_ds)?;
    let idx: Vec<usize> = (0..batch.min(train.len())).collect();
    let x = train.inputs.select(&idx);
    let model = build_model(&config.model_spec()?, config.seed)?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats + 1 {
        let t0 = Instant::now();
        model.predict(&x)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    times.remove(0);
    Ok(median(&mut times))
}

pub fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// One row of a model comparison at a given training-set size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompareRow {
    pub train_size: usize,
    pub loss_a: f64,
    pub loss_b: f64,
    pub time_a: f64,
    pub time_b: f64,
}

impl CompareRow {
    pub fn loss_ratio(&self) -> f64 {
        self.loss_a / self.loss_b
    }

    pub fn time_ratio(&self) -> f64 {
        self.time_a / self.time_b
    }
}

/// Trains both configs on identical data at every size in `sizes` and
/// reports best test losses and median epoch times.
pub fn compare(a: &RunConfig, b: &RunConfig, sizes: &[usize]) -> Result<Vec<CompareRow>, HarnessError> {
    if a.task != b.task || a.data_seed != b.data_seed || a.group != b.group {
        return Err(HarnessError::Validation(
            "compared runs must share task, group and data_seed".into(),
        ));
    }
    sizes
        .iter()
        .map(|&n| {
            let run = |c: &RunConfig| -> Result<(f64, f64), HarnessError> {
                let mut c = c.clone();
                c.train_size = n;
                c.metrics = None;
                c.checkpoint = None;
                let out = train(&c)?;
                let mut times: Vec<f64> = out.metrics.iter().map(|m| m.epoch_time_seconds).collect();
                Ok((out.best_test_loss, median(&mut times)))
            };
            let (loss_a, time_a) = run(a)?;
            let (loss_b, time_b) = run(b)?;
            Ok(CompareRow {
                train_size: n,
                loss_a,
                loss_b,
                time_a,
                time_b,
            })
        })
        .collect()
}
