use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::Window;
use crate::gradcore::{adam_step, AdamState};
use crate::model::Forecaster;
use crate::rng::{stream, Purpose};
use crate::Result;

/// What federation needs from a forecaster.
pub trait LocalModel {
    fn param_count(&self) -> usize;
    /// Channels per window; each window contributes this many loss rows.
    fn channels(&self) -> usize;
    fn loss_and_grad(&self, params: &[f64], batch: &[&Window]) -> Result<(f64, Vec<f64>)>;
    /// Predictions for every window, concatenated in window order.
    fn predict(&self, params: &[f64], windows: &[Window]) -> Result<Vec<f64>>;
}

impl LocalModel for Forecaster {
    fn param_count(&self) -> usize {
        Forecaster::param_count(self)
    }

    fn channels(&self) -> usize {
        self.config().channels
    }

    fn loss_and_grad(&self, params: &[f64], batch: &[&Window]) -> Result<(f64, Vec<f64>)> {
        Forecaster::loss_and_grad(self, params, batch)
    }

    fn predict(&self, params: &[f64], windows: &[Window]) -> Result<Vec<f64>> {
        Forecaster::predict(self, params, windows)
    }
}

/// One participant: its local model copy, optimizer state and private data.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub params: Vec<f64>,
    pub adam: AdamState,
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
    /// Mean training loss of each round the client trained in.
    pub losses: Vec<f64>,
}

impl ClientState {
    pub fn new(id: usize, init: &[f64], lr: f64, train: Vec<Window>, val: Vec<Window>, test: Vec<Window>) -> Self {
        ClientState {
            id,
            params: init.to_vec(),
            adam: AdamState::new(init.len(), lr),
            train,
            val,
            test,
            losses: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { epochs: 1, batch_size: 32, lr: 1e-3 }
    }
}

/// Runs `opts.epochs` epochs of shuffled mini-batch Adam on the client's
/// training windows. Batch order comes from the client's own stream for
/// this round. Returns the mean batch loss, or `None` if nothing ran.
pub fn local_update<M: LocalModel + ?Sized>(
    model: &M,
    client: &mut ClientState,
    opts: &TrainOptions,
    seed: u64,
    round: u64,
) -> Result<Option<f64>> {
    if client.train.is_empty() {
        log::warn!("client {} has no training windows; skipping local update", client.id);
        return Ok(None);
    }
    if opts.epochs == 0 {
        return Ok(None);
    }
    let mut rng = stream(seed, round, Purpose::LocalTraining, client.id as u64);
    let mut order: Vec<usize> = (0..client.train.len()).collect();
    let batch = opts.batch_size.max(1);
    let (mut total, mut batches) = (0.0, 0usize);
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let windows: Vec<&Window> = chunk.iter().map(|&i| &client.train[i]).collect();
            let (loss, grad) = model.loss_and_grad(&client.params, &windows)?;
            adam_step(&mut client.params, &grad, &mut client.adam, Some(opts.lr))?;
            total += loss;
            batches += 1;
        }
    }
    let mean = total / batches as f64;
    client.losses.push(mean);
    Ok(Some(mean))
}

/// The work a client performs between download and upload.
pub trait LocalUpdate {
    fn update(&self, client: &mut ClientState, round: u64) -> Result<Option<f64>>;
}

/// [`local_update`] bound to a model, options and seed.
pub struct AdamLocalUpdate<'a, M: ?Sized> {
    pub model: &'a M,
    pub opts: TrainOptions,
    pub seed: u64,
}

impl<M: LocalModel + ?Sized> LocalUpdate for AdamLocalUpdate<'_, M> {
    fn update(&self, client: &mut ClientState, round: u64) -> Result<Option<f64>> {
        local_update(self.model, client, &self.opts, self.seed, round)
    }
}
