use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Adam;
use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::TimeVlm;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    /// Stop after this many optimiser steps in total.
    pub max_steps: Option<usize>,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            lr: 1e-3,
            epochs: 10,
            patience: 3,
            max_steps: None,
            eval_batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch sizes, epochs and patience must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if self.max_steps == Some(0) {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate of epoch `e` (0-based): halved every epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * 0.5f64.powi(epoch as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub train_mse: f64,
    pub val_mse: f64,
    pub best_val_mse: f64,
    pub lr: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub initial_train_mse: f64,
    /// Evaluation-mode MSE of the restored best model on the training set.
    pub final_train_mse: f64,
    pub best_epoch: usize,
    pub steps: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn best_val_mse(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.best_val_mse)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse,best_val_mse,lr,steps\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.epoch, r.train_mse, r.val_mse, r.best_val_mse, r.lr, r.steps);
        }
        s
    }
}

/// Evaluation-mode forecasts and targets for every window of `set`,
/// stacked as `[N, H, D]`.
pub fn evaluate(model: &TimeVlm, set: &WindowSet, batch_size: usize) -> Result<(Tensor, Tensor)> {
    if set.is_empty() {
        return Err(Error::EmptyData("no windows".into()));
    }
    let (h, d) = (set.pred_len(), set.vars());
    let mut pred = Vec::with_capacity(set.len() * h * d);
    let mut truth = Vec::with_capacity(set.len() * h * d);
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = set.batch(chunk)?;
        pred.extend_from_slice(model.predict(&x)?.data());
        truth.extend_from_slice(y.data());
    }
    Ok((Tensor::new(&[set.len(), h, d], pred)?, Tensor::new(&[set.len(), h, d], truth)?))
}

pub fn evaluate_mse(model: &TimeVlm, set: &WindowSet, batch_size: usize) -> Result<f64> {
    let (p, t) = evaluate(model, set, batch_size)?;
    metrics::mse(&p, &t)
}

/// Minibatch Adam with per-epoch halving of the learning rate, early
/// stopping on validation MSE and restoration of the best parameters and
/// memory bank. With an empty validation set the last epoch is kept.
pub fn fit(model: &mut TimeVlm, train: &WindowSet, val: &WindowSet, cfg: &TrainConfig, seed: u64) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training split has no windows".into()));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d20f);
    let mut adam = Adam::new();
    let initial_train_mse = evaluate_mse(model, train, cfg.eval_batch_size)?;
    let mut best = (model.store.clone(), model.bank.clone());
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut bad = 0;
    let mut records = Vec::new();
    let mut steps = 0;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();
    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut batches) = (0.0, 0);
        let mut hit_limit = false;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = train.batch(chunk)?;
            let mut g = Graph::new();
            let out = model.forward(&mut g, &x, Some(&mut dropout_rng))?;
            let target = g.constant(y)?;
            let loss = g.mse(out.forecast, target)?;
            loss_sum += g.value(loss).item();
            batches += 1;
            let grads = g.backward(loss)?.params();
            adam.step(&mut model.store, &grads, lr)?;
            model.bank.write(&out.writes)?;
            steps += 1;
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                hit_limit = true;
                break;
            }
        }
        let train_mse = loss_sum / batches as f64;
        let val_mse = if val.is_empty() { f64::NAN } else { evaluate_mse(model, val, cfg.eval_batch_size)? };
        if val.is_empty() || val_mse < best_val {
            if !val.is_empty() {
                best_val = val_mse;
            }
            best_epoch = epoch;
            best = (model.store.clone(), model.bank.clone());
            bad = 0;
        } else {
            bad += 1;
        }
        records.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
            best_val_mse: best_val,
            lr,
            steps,
        });
        if hit_limit {
            break 'epochs;
        }
        if bad >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    model.store = best.0;
    model.bank = best.1;
    let final_train_mse = evaluate_mse(model, train, cfg.eval_batch_size)?;
    Ok(History {
        records,
        initial_train_mse,
        final_train_mse,
        best_epoch,
        steps,
        stopped_early,
    })
}
