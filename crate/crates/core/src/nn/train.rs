use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::mlp::{MlpModel, Mode};
use crate::error::{Error, Result};
use crate::exec;
use crate::rng;

/// Validation rows per parallel work item.
const VAL_CHUNK: usize = 1024;
/// Relative improvement the plateau scheduler requires.
const PLATEAU_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_delta: f64,
    pub early_stop_patience: usize,
    /// Trailing fraction of the (time-ordered) data held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 64,
            max_epochs: 2000,
            plateau_factor: 0.5,
            plateau_patience: 10,
            early_stop_delta: 1e-5,
            early_stop_patience: 50,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("plateau_factor", self.plateau_factor),
            ("early_stop_delta", self.early_stop_delta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be finite and > 0"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay", "must be finite and >= 0"));
        }
        if self.plateau_factor >= 1.0 {
            return Err(Error::invalid("plateau_factor", "must be < 1"));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("plateau_patience", self.plateau_patience),
            ("early_stop_patience", self.early_stop_patience),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "must be > 0"));
            }
        }
        if !(self.val_fraction > 0.0 && self.val_fraction <= 0.5) {
            return Err(Error::invalid("val_fraction", "must lie in (0, 0.5]"));
        }
        Ok(())
    }
}

/// Row-major inputs with one scalar target per row, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_features: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(n_features: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() * n_features {
            return Err(Error::LengthMismatch {
                left: inputs.len(),
                right: targets.len() * n_features,
            });
        }
        Ok(Self {
            n_features,
            inputs,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.n_features..(i + 1) * self.n_features]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    /// Learning rate in effect during each epoch.
    pub lr_trace: Vec<f64>,
    pub stop_reason: StopReason,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,lr\n");
        for i in 0..self.epochs_run {
            s.push_str(&format!("{},{},{},{}\n", i, self.train_loss[i], self.val_loss[i], self.lr_trace[i]));
        }
        s
    }
}

/// Eval-mode mean squared error, chunked for the parallel executor and
/// reduced in a fixed order.
pub fn mse(model: &MlpModel, data: &Dataset, range: std::ops::Range<usize>) -> Result<f64> {
    let starts: Vec<usize> = range.clone().step_by(VAL_CHUNK).collect();
    let f = data.n_features;
    let sums = exec::map(&starts, |&start| -> Result<f64> {
        let end = (start + VAL_CHUNK).min(range.end);
        let pred = model.predict_batch(&data.inputs[start * f..end * f], end - start)?;
        Ok(pred
            .iter()
            .zip(&data.targets[start..end])
            .map(|(p, t)| (p - t) * (p - t))
            .sum())
    });
    let mut total = 0.0;
    for s in sums {
        total += s?;
    }
    Ok(total / range.len() as f64)
}

/// Trains `model` in place and leaves it in Eval mode holding the parameters
/// of the best validation epoch.
pub fn fit(model: &mut MlpModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let required = 10 * cfg.batch_size;
    if data.len() < required {
        return Err(Error::DatasetTooSmall {
            len: data.len(),
            required,
        });
    }
    if data.n_features != model.n_inputs() {
        return Err(Error::LengthMismatch {
            left: data.n_features,
            right: model.n_inputs(),
        });
    }
    let n_val = ((data.len() as f64) * cfg.val_fraction).round().max(1.0) as usize;
    let n_train = data.len() - n_val;
    let f = data.n_features;

    let mut shuffle_rng = rng::stream(cfg.seed, rng::NN_SHUFFLE);
    let mut dropout_rng = rng::stream(cfg.seed, rng::NN_DROPOUT);
    let mut opt = Adam::new(model, cfg.lr, cfg.weight_decay);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut xb = Vec::with_capacity(cfg.batch_size * f);
    let mut yb = Vec::with_capacity(cfg.batch_size);

    let mut report = TrainReport {
        epochs_run: 0,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_val_loss: f64::INFINITY,
        best_epoch: 0,
        lr_trace: Vec::new(),
        stop_reason: StopReason::MaxEpochs,
    };
    let mut best_model = model.clone();
    let mut since_best = 0;
    let mut plateau_best = f64::INFINITY;
    let mut plateau_bad = 0;

    for epoch in 0..cfg.max_epochs {
        model.set_mode(Mode::Train);
        order.shuffle(&mut shuffle_rng);
        let lr = opt.lr;
        let mut loss_sum = 0.0;
        let mut batches = 0;
        // A trailing partial batch is dropped: tiny batches make batch-norm
        // statistics meaningless.
        for chunk in order.chunks_exact(cfg.batch_size) {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(data.row(i));
                yb.push(data.targets[i]);
            }
            let (loss, grads) = model.train_batch(&xb, &yb, &mut dropout_rng)?;
            opt.step(model, grads);
            loss_sum += loss;
            batches += 1;
        }
        model.set_mode(Mode::Eval);
        if !model.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        let val = mse(model, data, n_train..data.len())?;
        report.train_loss.push(loss_sum / batches as f64);
        report.val_loss.push(val);
        report.lr_trace.push(lr);
        report.epochs_run = epoch + 1;

        if val < plateau_best * (1.0 - PLATEAU_THRESHOLD) {
            plateau_best = val;
            plateau_bad = 0;
        } else {
            plateau_bad += 1;
            if plateau_bad >= cfg.plateau_patience {
                opt.lr *= cfg.plateau_factor;
                plateau_bad = 0;
            }
        }

        if val < report.best_val_loss {
            if val < report.best_val_loss - cfg.early_stop_delta {
                since_best = 0;
            } else {
                since_best += 1;
            }
            report.best_val_loss = val;
            report.best_epoch = epoch;
            best_model.clone_from(model);
        } else {
            since_best += 1;
        }
        if since_best >= cfg.early_stop_patience {
            report.stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    *model = best_model;
    model.set_mode(Mode::Eval);
    Ok(report)
}
