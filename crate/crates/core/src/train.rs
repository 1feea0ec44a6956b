//! Centralized training on pooled windows with early stopping.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::Window;
use crate::federation::{squared_error, LocalModel};
use crate::gradcore::{adam_step, AdamState, LrSchedule};
use crate::rng::{stream, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CentralConfig {
    pub max_epochs: usize,
    /// Epochs without a strictly better validation loss before stopping.
    pub patience: usize,
    pub batch_size: usize,
    /// One-cycle base and peak learning rates.
    pub base_lr: f64,
    pub peak_lr: f64,
    pub seed: u64,
}

impl Default for CentralConfig {
    fn default() -> Self {
        CentralConfig { max_epochs: 100, patience: 20, batch_size: 32, base_lr: 1e-4, peak_lr: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralResult {
    pub best: Vec<f64>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub history: Vec<EpochLog>,
}

fn mean_loss<M: LocalModel + ?Sized>(model: &M, params: &[f64], windows: &[Window]) -> Result<f64> {
    let (sse, _) = squared_error(model, params, windows)?;
    Ok(sse / (windows.len() * model.channels()) as f64)
}

/// Mini-batch Adam under a one-cycle schedule. Validation loss (training
/// loss when `val` is empty) drives early stopping; the best parameters are
/// returned.
pub fn train_centralized<M: LocalModel + ?Sized>(
    model: &M,
    init: &[f64],
    train: &[Window],
    val: &[Window],
    cfg: &CentralConfig,
) -> Result<CentralResult> {
    if train.is_empty() {
        return Err(Error::Empty("training windows"));
    }
    if cfg.max_epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("max_epochs and batch_size must be positive".into()));
    }
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let schedule =
        LrSchedule::OneCycle { base: cfg.base_lr, peak: cfg.peak_lr, total_steps: cfg.max_epochs * steps_per_epoch };
    let mut params = init.to_vec();
    let mut adam = AdamState::new(params.len(), cfg.base_lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut step = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut rng = stream(cfg.seed, epoch as u64, Purpose::Shuffle, 0);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut lr = schedule.rate(step);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Window> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grad) = model.loss_and_grad(&params, &batch)?;
            lr = schedule.rate(step);
            adam_step(&mut params, &grad, &mut adam, Some(lr))?;
            total += loss;
            step += 1;
        }
        let train_loss = total / steps_per_epoch as f64;
        let val_loss = if val.is_empty() { mean_loss(model, &params, train)? } else { mean_loss(model, &params, val)? };
        history.push(EpochLog { epoch, train_loss, val_loss, lr });
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best.copy_from_slice(&params);
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(CentralResult { best, best_epoch, best_val, history })
}
