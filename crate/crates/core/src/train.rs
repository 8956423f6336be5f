//! Training loop, evaluation and the per-epoch metrics log.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::checkpoint;
use crate::data::{batches, collate, Sample, SplitDataset, CLASSES};
use crate::error::{Error, Result};
use crate::layers::ForwardCtx;
use crate::model::SequentialModel;
use crate::optim::{adadelta_step, softmax_cross_entropy, AdadeltaConfig};
use crate::seed;
use crate::tensor::{Scalar, Tensor};

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,test_acc,seconds";

const EVAL_CHUNK: usize = 128;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Total epochs; a resumed model continues until it has completed this many.
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adadelta: AdadeltaConfig,
    pub metrics_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    /// Also checkpoint after every K-th epoch; 0 writes only at the end.
    pub checkpoint_every: usize,
    /// Record wall-clock seconds per epoch. When off the column is 0, which
    /// makes metrics files byte-comparable across runs.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 128,
            seed: 42,
            adadelta: AdadeltaConfig::default(),
            metrics_path: None,
            checkpoint_path: None,
            checkpoint_every: 50,
            record_timing: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.adadelta.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub seconds: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.train_loss, self.train_acc, self.test_acc, self.seconds
        )
    }
}

/// Append-only CSV of [`EpochMetrics`], flushed after every row.
pub struct MetricsLog {
    path: PathBuf,
    file: File,
}

impl MetricsLog {
    /// Opens `path`, writing a fresh header unless `append` is set and the
    /// file already has content.
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        let existing = append && path.metadata().map(|m| m.len() > 0).unwrap_or(false);
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(existing)
            .truncate(!existing)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if !existing {
            writeln!(file, "{METRICS_HEADER}").map_err(|e| Error::io(path, e))?;
            file.flush().map_err(|e| Error::io(path, e))?;
        }
        Ok(MetricsLog {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, m: &EpochMetrics) -> Result<()> {
        writeln!(self.file, "{}", m.csv_row()).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))?;
        self.file.sync_data().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a metrics CSV; errors name the offending line.
pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let header_err = |reason: String| Error::Metrics { line: 1, reason };
    let headers = reader
        .headers()
        .map_err(|e| header_err(e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if headers != METRICS_HEADER {
        return Err(header_err(format!("expected header `{METRICS_HEADER}`, found `{headers}`")));
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Metrics {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |reason: String| Error::Metrics { line, reason };
        if record.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", record.len())));
        }
        let num = |i: usize| -> Result<f64> {
            let v: f64 = record[i]
                .trim()
                .parse()
                .map_err(|_| bad(format!("field {} `{}` is not a number", i + 1, &record[i])))?;
            if !v.is_finite() {
                return Err(bad(format!("field {} is not finite", i + 1)));
            }
            Ok(v)
        };
        let epoch = record[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| bad(format!("epoch `{}` is not an integer", &record[0])))?;
        let m = EpochMetrics {
            epoch,
            train_loss: num(1)?,
            train_acc: num(2)?,
            test_acc: num(3)?,
            seconds: num(4)?,
        };
        if !(0.0..=1.0).contains(&m.train_acc) || !(0.0..=1.0).contains(&m.test_acc) {
            return Err(bad("accuracy outside [0, 1]".into()));
        }
        rows.push(m);
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; CLASSES]; CLASSES],
}

impl Evaluation {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode accuracy and confusion matrix over `samples`.
pub fn evaluate<T: Scalar>(model: &SequentialModel<T>, samples: &[Sample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty sample list".into()));
    }
    let predictions: Vec<Vec<usize>> = samples
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let refs: Vec<&Sample> = chunk.iter().collect();
            let batch = collate::<T>(&refs)?;
            let logits = model.infer_logits(&batch.images)?;
            Ok(logits.data().chunks_exact(model.classes()).map(argmax).collect())
        })
        .collect::<Result<_>>()?;

    let mut confusion = [[0usize; CLASSES]; CLASSES];
    for (s, p) in samples.iter().zip(predictions.into_iter().flatten()) {
        confusion[s.label as usize][p] += 1;
    }
    let correct: usize = (0..CLASSES).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / samples.len() as f64,
        confusion,
    })
}

/// One optimization step on a batch. Returns the mean batch loss.
pub fn train_step<T: Scalar>(
    model: &mut SequentialModel<T>,
    images: &Tensor<T>,
    targets: &Tensor<T>,
    adadelta: &AdadeltaConfig,
    dropout_seed: u64,
) -> Result<f64> {
    let logits = model.forward_logits(images, &ForwardCtx::train(dropout_seed))?;
    let loss = softmax_cross_entropy(&logits, targets)?;
    model.backward(&loss.grad_logits)?;
    for layer in model.layers_mut() {
        if let Some(params) = layer.params_mut() {
            adadelta_step(params, adadelta)?;
        }
    }
    Ok(loss.mean_loss)
}

/// Runs one epoch over `samples`; returns the sample-weighted mean loss.
pub fn train_epoch<T: Scalar>(
    model: &mut SequentialModel<T>,
    samples: &[Sample],
    config: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let epoch_seed = seed::derive(config.seed, &[epoch as u64]);
    let mut total = 0.0;
    for (i, batch) in batches::<T>(samples, config.batch_size, epoch_seed)?.enumerate() {
        let batch = batch?;
        let dropout_seed = seed::derive(epoch_seed, &[i as u64]);
        let loss = train_step(model, &batch.images, &batch.targets, &config.adadelta, dropout_seed)?;
        total += loss * batch.len() as f64;
    }
    let mean = total / samples.len() as f64;
    if !mean.is_finite() {
        return Err(Error::Numeric(format!("training loss diverged at epoch {epoch}")));
    }
    Ok(mean)
}

/// Trains until `model.epochs_completed == config.epochs`, calling
/// `observe` after each epoch. Metrics are appended to
/// `config.metrics_path` and checkpoints written to `config.checkpoint_path`
/// as configured.
pub fn train_with(
    model: &mut SequentialModel<f32>,
    data: &SplitDataset,
    config: &TrainConfig,
    mut observe: impl FnMut(&EpochMetrics) -> ControlFlow<()>,
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    let resuming = model.epochs_completed > 0;
    let mut log = config
        .metrics_path
        .as_deref()
        .map(|p| MetricsLog::open(p, resuming))
        .transpose()?;

    let mut history = Vec::new();
    while model.epochs_completed < config.epochs {
        let epoch = model.epochs_completed + 1;
        let started = Instant::now();
        let train_loss = train_epoch(model, &data.train, config, epoch)?;
        model.epochs_completed = epoch;
        let train_acc = evaluate(model, &data.train)?.accuracy;
        let test_acc = if data.test.is_empty() {
            0.0
        } else {
            evaluate(model, &data.test)?.accuracy
        };
        let seconds = if config.record_timing {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        let metrics = EpochMetrics {
            epoch,
            train_loss,
            train_acc,
            test_acc,
            seconds,
        };
        log::info!(
            "epoch {epoch}: loss {train_loss:.4} train {train_acc:.4} test {test_acc:.4} ({seconds:.1}s)"
        );

        if let Some(log) = log.as_mut() {
            log.append(&metrics)?;
        }
        let last = epoch == config.epochs;
        let periodic = config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0;
        let stop = observe(&metrics).is_break();
        if let Some(path) = &config.checkpoint_path {
            if last || periodic || stop {
                checkpoint::save_checkpoint(model, path, &config.adadelta)?;
            }
        }
        history.push(metrics);
        if stop {
            break;
        }
    }
    Ok(history)
}

pub fn train(
    model: &mut SequentialModel<f32>,
    data: &SplitDataset,
    config: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    train_with(model, data, config, |_| ControlFlow::Continue(()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_take_lowest() {
        assert_eq!(argmax(&[0.1f32, 0.5, 0.5, 0.2]), 1);
        assert_eq!(argmax(&[1.0f64; 4]), 0);
    }

    #[test]
    fn csv_row_format() {
        let m = EpochMetrics {
            epoch: 3,
            train_loss: 0.5,
            train_acc: 0.25,
            test_acc: 1.0,
            seconds: 1.5,
        };
        assert_eq!(m.csv_row(), "3,0.500000,0.250000,1.000000,1.500000");
    }

    #[test]
    fn empty_evaluation_is_data_error() {
        let m = crate::model::build_mlp::<f32>(0);
        assert!(matches!(evaluate(&m, &[]), Err(Error::Data(_))));
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.epochs = 0;
        assert!(c.validate().is_err());
        c.epochs = 1;
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }
}
