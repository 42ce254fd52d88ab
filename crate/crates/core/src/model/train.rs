//! Minibatch Adam training with validation-based early stopping.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, Checkpoint, Dtype};
use super::loss::{elbo_prepared, zero_grads, PreparedExample};
use super::{sample_standard_normal, ModelParams};
use crate::dataset::TrainingExample;
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Weight of the KL term.
    pub beta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 0.005, beta: 1.0, batch_size: 8, epochs: 100, patience: 10, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("lr and beta must be finite and nonnegative".into()));
        }
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size and patience must be positive".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    #[serde(skip)]
    pub(crate) m: Vec<Vec<f64>>,
    #[serde(skip)]
    pub(crate) v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &ModelParams) -> Self {
        let zeros = zero_grads(params);
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Vec<f64>]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((tensor, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                tensor.data[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_recon: f64,
    pub train_kl: f64,
    /// Validation loss at `h = mu`; `None` without a validation set.
    pub val_loss: Option<f64>,
}

/// Everything needed to continue an interrupted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Epochs completed.
    pub epoch: usize,
    pub step: u64,
    pub best_val: Option<f64>,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
    pub adam: Adam,
    #[serde(skip)]
    pub(crate) best_params: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation epoch, or the last epoch without a
    /// validation set.
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
    pub stopped_early: bool,
    pub state: TrainState,
}

fn prepare(params: &ModelParams, set: &[TrainingExample]) -> Result<Vec<PreparedExample>> {
    set.iter().map(|ex| PreparedExample::new(params, ex)).collect()
}

fn validation_loss(params: &ModelParams, val: &[PreparedExample], beta: f64) -> f64 {
    let zero = vec![0.0; params.config().latent_dim];
    let total: f64 = val.par_iter().map(|ex| elbo_prepared(params, ex, beta, &zero, None).loss).collect::<Vec<_>>().iter().sum();
    total / val.len() as f64
}

fn with_tensors(params: &ModelParams, data: &[Vec<f64>]) -> ModelParams {
    let mut p = params.clone();
    for (t, d) in p.tensors_mut().iter_mut().zip(data) {
        t.data.clone_from(d);
    }
    p
}

/// Train `params` on `train_set`. Each epoch shuffles and draws noise from a
/// stream derived from the seed and the epoch index, and per-example gradients
/// are summed in batch order, so results do not depend on the thread count
/// and a run resumed from `resume` matches an uninterrupted one. When
/// `checkpoint` is given the full training state is written there after every
/// epoch.
pub fn train(
    params: ModelParams,
    train_set: &[TrainingExample],
    val_set: &[TrainingExample],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    resume: Option<TrainState>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let train_data = prepare(&params, train_set)?;
    let val_data = prepare(&params, val_set)?;
    let mut params = params;
    let mut state = resume.unwrap_or_else(|| TrainState {
        epoch: 0,
        step: 0,
        best_val: None,
        best_epoch: 0,
        history: Vec::new(),
        adam: Adam::new(cfg.lr, &params),
        best_params: None,
    });
    let latent_dim = params.config().latent_dim;
    let mut stopped_early = false;

    while state.epoch < cfg.epochs {
        if state.best_val.is_some() && state.epoch - state.best_epoch >= cfg.patience {
            stopped_early = true;
            break;
        }
        let epoch = state.epoch;
        let mut rng = substream(cfg.seed, &format!("train/epoch{epoch}"));
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        order.shuffle(&mut rng);
        let (mut sum_loss, mut sum_recon, mut sum_kl) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let eps: Vec<Vec<f64>> = batch.iter().map(|_| sample_standard_normal(latent_dim, &mut rng)).collect();
            let results: Vec<_> = batch
                .par_iter()
                .zip(&eps)
                .map(|(&i, e)| {
                    let mut g = zero_grads(&params);
                    let terms = elbo_prepared(&params, &train_data[i], cfg.beta, e, Some(&mut g));
                    (terms, g)
                })
                .collect();
            let mut grads = zero_grads(&params);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for (terms, g) in &results {
                batch_loss += terms.loss;
                sum_loss += terms.loss;
                sum_recon += terms.recon;
                sum_kl += terms.kl;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    for (a, b) in acc.iter_mut().zip(gi) {
                        *a += scale * b;
                    }
                }
            }
            state.step += 1;
            if !batch_loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { step: state.step, loss: batch_loss * scale });
            }
            state.adam.step(&mut params, &grads);
        }
        let n = train_data.len() as f64;
        let val_loss = (!val_data.is_empty()).then(|| validation_loss(&params, &val_data, cfg.beta));
        if let Some(v) = val_loss {
            if !v.is_finite() {
                return Err(Error::Diverged { step: state.step, loss: v });
            }
            if state.best_val.map_or(true, |b| v < b) {
                state.best_val = Some(v);
                state.best_epoch = epoch + 1;
                state.best_params = Some(params.tensors().iter().map(|t| t.data.clone()).collect());
            }
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: sum_loss / n,
            train_recon: sum_recon / n,
            train_kl: sum_kl / n,
            val_loss,
        };
        log::info!(
            "epoch {} train {:.5} (recon {:.5}, kl {:.4}) val {}",
            stats.epoch,
            stats.train_loss,
            stats.train_recon,
            stats.train_kl,
            val_loss.map_or("-".to_string(), |v| format!("{v:.5}"))
        );
        state.history.push(stats);
        state.epoch += 1;
        if let Some(path) = checkpoint {
            let ckpt = Checkpoint { params: params.clone(), train_state: Some(state.clone()) };
            save_checkpoint(path, &ckpt, Dtype::F64)?;
        }
    }

    let best = match &state.best_params {
        Some(data) => with_tensors(&params, data),
        None => params,
    };
    Ok(TrainOutcome { params: best, history: state.history.clone(), stopped_early, state })
}
