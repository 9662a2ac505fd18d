//! Minibatch training with adaptive moment estimation and early stopping on
//! a time-blocked validation split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{loss_and_gradient, ForwardOptions, ModelWeights};
use super::tensor::Mat;
use crate::error::{Error, Result};
use crate::predictors::ObservationHistory;
use crate::world::Vec3;

/// One supervised window: the observed history of a query robot and its true
/// future velocities. `run` and `tick` locate the window in simulation time.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub run: u32,
    pub tick: u32,
    pub query: u32,
    pub history: ObservationHistory,
    pub future_velocities: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Early stop after this many epochs without validation improvement.
    pub patience: usize,
    pub l2_lambda: f64,
    /// Backprop only through the last `t` steps of each sequence; full when `None`.
    pub truncation_depth: Option<usize>,
    /// Fraction of each run's ticks (the latest ones) held out for validation.
    pub validation_fraction: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            epochs: 200,
            patience: 20,
            l2_lambda: 0.01,
            truncation_depth: None,
            validation_fraction: 0.1,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(name, "must be finite and non-negative"))
            }
        };
        pos("learning_rate", self.learning_rate)?;
        pos("l2_lambda", self.l2_lambda)?;
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, "must lie in [0, 1)"));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation_fraction", "must lie in [0, 1)"));
        }
        if self.truncation_depth == Some(0) {
            return Err(Error::config("truncation_depth", "must be positive when set"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the lowest validation loss seen (the initial weights
    /// count as epoch 0).
    pub weights: ModelWeights,
    pub curve: Vec<LossPoint>,
    /// Validation loss of the initial weights.
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    /// 0 when no epoch improved on the initial weights.
    pub best_epoch: usize,
    pub train_size: usize,
    pub val_size: usize,
    /// True when the split produced no validation windows and the training
    /// set was used for validation instead.
    pub validation_fallback: bool,
}

/// Split example indices into (train, validation). Within each run the
/// latest `fraction` of ticks is validation; training windows whose future
/// overlaps the validation block are dropped.
pub fn split_by_time(examples: &[Example], fraction: f64, window: u32) -> (Vec<usize>, Vec<usize>) {
    let mut runs: std::collections::BTreeMap<u32, (u32, u32)> = Default::default();
    for e in examples {
        let r = runs.entry(e.run).or_insert((e.tick, e.tick));
        r.0 = r.0.min(e.tick);
        r.1 = r.1.max(e.tick);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, e) in examples.iter().enumerate() {
        let (lo, hi) = runs[&e.run];
        let span = (hi - lo + 1) as f64;
        let val_ticks = (span * fraction).floor() as u32;
        let cut = hi + 1 - val_ticks;
        if val_ticks > 0 && e.tick >= cut {
            val.push(i);
        } else if val_ticks == 0 || e.tick + window < cut {
            train.push(i);
        }
    }
    (train, val)
}

/// Mean data loss plus `λ Σ W^2` over `indices`, evaluated in fixed chunks.
pub fn evaluate_loss(
    examples: &[Example],
    indices: &[usize],
    w: &ModelWeights,
    l2_lambda: f64,
    chunk: usize,
) -> Result<f64> {
    if indices.is_empty() {
        return Ok(l2_lambda * w.l2_sum());
    }
    let mut total = 0.0;
    for part in indices.chunks(chunk.max(1)) {
        let hs: Vec<&ObservationHistory> = part.iter().map(|&i| &examples[i].history).collect();
        let preds = super::model::forward_batch(&hs, w, ForwardOptions::default())?;
        for (&i, p) in part.iter().zip(&preds) {
            total += super::model::data_loss(p, &examples[i].future_velocities);
        }
    }
    Ok(total / indices.len() as f64 + l2_lambda * w.l2_sum())
}

struct Adam {
    m: ModelWeights,
    v: ModelWeights,
    t: i32,
}

impl Adam {
    fn new(w: &ModelWeights) -> Self {
        Adam { m: w.zeros_like(), v: w.zeros_like(), t: 0 }
    }

    fn step(&mut self, w: &mut ModelWeights, g: &ModelWeights, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let gs = g.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((wt, gt), mt), vt) in w.tensors_mut().into_iter().zip(gs).zip(ms).zip(vs) {
            update(wt, gt, mt, vt, cfg, bc1, bc2);
        }
    }
}

fn update(w: &mut Mat, g: &Mat, m: &mut Mat, v: &mut Mat, cfg: &TrainConfig, bc1: f64, bc2: f64) {
    for i in 0..w.data.len() {
        let gi = g.data[i];
        m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
        v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
        let mhat = m.data[i] / bc1;
        let vhat = v.data[i] / bc2;
        w.data[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
    }
}

/// Train from `init`. Deterministic given the inputs and `cfg.rng_seed`.
pub fn train(examples: &[Example], init: ModelWeights, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(examples, init, cfg, |_| {})
}

/// [`train`] with a callback after every completed epoch.
pub fn train_with_progress(
    examples: &[Example],
    init: ModelWeights,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&LossPoint),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    init.config.validate()?;
    if examples.is_empty() {
        return Err(Error::config("dataset", "must contain at least one example"));
    }
    let window = (init.config.history_len + init.config.horizon) as u32;
    let (train_idx, mut val_idx) = split_by_time(examples, cfg.validation_fraction, window);
    if train_idx.is_empty() {
        return Err(Error::config("dataset", "no training windows remain after the validation split"));
    }
    let validation_fallback = val_idx.is_empty();
    if validation_fallback {
        val_idx = train_idx.clone();
    }

    let eval_chunk = cfg.batch_size.max(64);
    let mut w = init;
    let initial_val_loss = evaluate_loss(examples, &val_idx, &w, cfg.l2_lambda, eval_chunk)?;
    let mut best = w.clone();
    let mut best_val = initial_val_loss;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut last_finite_epoch = None;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut adam = Adam::new(&w);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order = train_idx.clone();
    let mut sample_loss = vec![0.0; examples.len()];

    for epoch in 1..=cfg.epochs {
        order.copy_from_slice(&train_idx);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let hs: Vec<&ObservationHistory> = batch.iter().map(|&i| &examples[i].history).collect();
            let ts: Vec<&[Vec3]> = batch.iter().map(|&i| examples[i].future_velocities.as_slice()).collect();
            let bg = loss_and_gradient(&hs, &ts, &w, cfg.l2_lambda, cfg.truncation_depth)?;
            for (&i, l) in batch.iter().zip(&bg.sample_losses) {
                sample_loss[i] = *l;
            }
            adam.step(&mut w, &bg.gradient, cfg);
        }
        // Summed in index order so the value does not depend on the shuffle.
        let data: f64 = train_idx.iter().map(|&i| sample_loss[i]).sum::<f64>() / train_idx.len() as f64;
        let train_loss = data + cfg.l2_lambda * w.l2_sum();
        if !train_loss.is_finite() || !w.is_finite() {
            return Err(Error::TrainingDiverged { epoch, last_finite_epoch });
        }
        let val_loss = evaluate_loss(examples, &val_idx, &w, cfg.l2_lambda, eval_chunk)?;
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch, last_finite_epoch });
        }
        last_finite_epoch = Some(epoch);
        curve.push(LossPoint { epoch, train_loss, val_loss });
        on_epoch(&curve[curve.len() - 1]);
        if val_loss < best_val {
            best_val = val_loss;
            best = w.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        weights: best,
        curve,
        initial_val_loss,
        best_val_loss: best_val,
        best_epoch,
        train_size: train_idx.len(),
        val_size: if validation_fallback { 0 } else { val_idx.len() },
        validation_fallback,
    })
}
