//! Minibatch SGD over cached samples, each orientation or view an
//! independent sample.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cache::SampleSet;
use super::eval::{argmax, average_per_class_accuracy, confusion_matrix};
use crate::error::{Error, Result};
use crate::nn::{softmax_loss, Mode, Network, OptimizerConfig, Sgd, Tensor};
use crate::util::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Learning rate is multiplied by `lr_gamma` every `lr_step` epochs (0 disables).
    pub lr_step: usize,
    pub lr_gamma: f64,
    /// Observer checks per epoch, for sub-epoch convergence measurements.
    pub checks_per_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
            lr_step: 20,
            lr_gamma: 0.1,
            checks_per_epoch: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 || self.checks_per_epoch == 0 {
            return Err(Error::InvalidArgument("batch size and checks per epoch must be positive".into()));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr gamma {} must be positive", self.lr_gamma)));
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let drops = epoch.checked_div(self.lr_step).unwrap_or(0);
        self.optimizer.learning_rate * self.lr_gamma.powi(drops as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss: f64,
    /// Average per-class accuracy of the training-mode predictions made
    /// during the epoch.
    pub train_metric: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Loss of the very first minibatch, before any update.
    pub initial_loss: f64,
    pub rows: Vec<EpochRow>,
    /// Set when an observer stopped training early.
    pub stopped_at: Option<f64>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_metric,wall_seconds\n");
        for r in &self.rows {
            out += &format!("{},{:.6},{:.6},{:.3}\n", r.epoch, r.loss, r.train_metric, r.wall_seconds);
        }
        out
    }
}

pub trait TrainObserver {
    /// Called `checks_per_epoch` times per epoch with the fractional number
    /// of epochs completed; returning true stops training.
    fn on_check(&mut self, _net: &mut Network<f32>, _epochs_done: f64) -> Result<bool> {
        Ok(false)
    }

    fn on_epoch(&mut self, _net: &Network<f32>, _row: &EpochRow) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

pub fn train(
    net: &mut Network<f32>,
    samples: &SampleSet,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainLog> {
    cfg.validate()?;
    if net.input_shape() != samples.item_shape.as_slice() {
        return Err(Error::Shape(format!(
            "network expects {:?} but cached samples are {:?}",
            net.input_shape(),
            samples.item_shape
        )));
    }
    if samples.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    let classes = net.output_shape()[0];
    if let Some(&bad) = samples.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Shape(format!("label {bad} out of range for {classes} classes")));
    }
    let seed = cfg.optimizer.seed;
    let mut sgd = Sgd::new(cfg.optimizer, net)?;
    let mut log = TrainLog::default();
    let start = Instant::now();
    let n = samples.len();
    let batches = n.div_ceil(cfg.batch_size);
    let mut step = 0u64;
    let mut x = Vec::new();
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("epoch/{epoch}"))));
        let (mut loss_sum, mut preds, mut truth) = (0.0, Vec::with_capacity(n), Vec::with_capacity(n));
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            x.clear();
            for &s in idx {
                samples.push_input(s, &mut x);
            }
            let labels: Vec<usize> = idx.iter().map(|&s| samples.sample_label(s)).collect();
            let mut shape = vec![idx.len()];
            shape.extend_from_slice(&samples.item_shape);
            let input = Tensor::from_vec(&shape, std::mem::take(&mut x))?;
            net.set_dropout_seed(derive_seed(seed, &format!("step/{step}")));
            net.zero_grad();
            let scores = net.forward(&input, Mode::Train)?;
            let (loss, grad) = softmax_loss(&scores, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Invariant(format!("loss became {loss} at epoch {epoch}")));
            }
            if step == 0 {
                log.initial_loss = loss;
            }
            net.backward(grad, false)?;
            sgd.step(net, lr)?;
            x = input.data;
            step += 1;
            loss_sum += loss * idx.len() as f64;
            for (row, &l) in scores.data.chunks(classes).zip(&labels) {
                preds.push(argmax(row));
                truth.push(l);
            }
            let before = b * cfg.checks_per_epoch / batches;
            let after = (b + 1) * cfg.checks_per_epoch / batches;
            if after > before {
                let done = epoch as f64 + (b + 1) as f64 / batches as f64;
                if observer.on_check(net, done)? {
                    log.stopped_at = Some(done);
                    return Ok(log);
                }
            }
        }
        let row = EpochRow {
            epoch: epoch + 1,
            loss: loss_sum / n as f64,
            train_metric: average_per_class_accuracy(&confusion_matrix(&preds, &truth, classes)?),
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        observer.on_epoch(net, &row)?;
        log.rows.push(row);
    }
    Ok(log)
}
