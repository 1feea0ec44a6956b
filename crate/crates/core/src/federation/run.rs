use alloc::vec::Vec;

use super::client::{AdamLocalUpdate, ClientState, LocalModel, LocalUpdate, TrainOptions};
use super::plan::{draw_round_plan, FedRatios, Policy};
use super::round::fed_round;
use crate::data::Window;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FedConfig {
    pub policy: Policy,
    pub ratios: FedRatios,
    pub train: TrainOptions,
    /// Hard cap on rounds.
    pub max_rounds: usize,
    /// Stop once the global training loss has not strictly improved for
    /// this many rounds. `None` or `Some(0)` runs exactly `max_rounds`.
    pub patience: Option<usize>,
    pub seed: u64,
    /// Also score the global model on every client's test windows each round.
    pub eval_test_each_round: bool,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        self.ratios.validate()?;
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be at least 1".into()));
        }
        if !(self.train.lr.is_finite() && self.train.lr > 0.0) {
            return Err(Error::Config(alloc::format!("lr = {} must be positive", self.train.lr)));
        }
        Ok(())
    }
}

/// Everything recorded about one round.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundLog {
    pub round: u64,
    pub policy: Policy,
    pub downlink: u64,
    pub uplink: u64,
    pub cum_downlink: u64,
    pub cum_uplink: u64,
    /// Loss of the new global model over every client's training windows.
    pub global_loss: f64,
    pub client_losses: Vec<Option<f64>>,
    pub selected: Vec<usize>,
    /// Global model RMSE over every client's validation windows.
    pub rmse_val: Option<f64>,
    /// Squared error and point count of the global model on the test windows.
    pub test_sse: Option<f64>,
    pub test_points: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StopRule {
    Patience,
    MaxRounds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationResult {
    /// Global model with the lowest training loss seen.
    pub best: Vec<f64>,
    pub best_round: u64,
    pub best_loss: f64,
    pub last: Vec<f64>,
    pub logs: Vec<RoundLog>,
    pub stopped_by: StopRule,
}

/// Sum of squared errors and number of predicted points over `windows`.
pub fn squared_error<M: LocalModel + ?Sized>(model: &M, params: &[f64], windows: &[Window]) -> Result<(f64, usize)> {
    if windows.is_empty() {
        return Ok((0.0, 0));
    }
    let pred = model.predict(params, windows)?;
    let targets = windows.iter().flat_map(|w| w.target.iter());
    let mut sse = 0.0;
    let mut points = 0usize;
    for (p, t) in pred.iter().zip(targets) {
        sse += (p - t) * (p - t);
        points += 1;
    }
    if points != pred.len() {
        return Err(Error::Length { expected: pred.len(), actual: points });
    }
    Ok((sse, points))
}

/// Root mean squared error between equally long slices.
pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Length { expected: target.len(), actual: pred.len() });
    }
    if pred.is_empty() {
        return Err(Error::Empty("rmse"));
    }
    let sse: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(libm::sqrt(sse / pred.len() as f64))
}

/// RMSE over every predicted point of every window set, pooled.
pub fn evaluate_rmse<M: LocalModel + ?Sized>(model: &M, params: &[f64], sets: &[&[Window]]) -> Result<f64> {
    let (mut sse, mut points) = (0.0, 0usize);
    for set in sets {
        let (s, n) = squared_error(model, params, set)?;
        sse += s;
        points += n;
    }
    if points == 0 {
        return Err(Error::Empty("test windows"));
    }
    Ok(libm::sqrt(sse / points as f64))
}

fn pooled<M: LocalModel + ?Sized>(
    model: &M,
    params: &[f64],
    clients: &[ClientState],
    pick: impl Fn(&ClientState) -> &[Window],
) -> Result<(f64, usize)> {
    let (mut sse, mut points) = (0.0, 0usize);
    for c in clients {
        let (s, n) = squared_error(model, params, pick(c))?;
        sse += s;
        points += n;
    }
    Ok((sse, points))
}

/// Runs rounds of `cfg.policy` starting from the global model `init`,
/// training clients with mini-batch Adam.
///
/// Clients keep whatever parameters and optimizer state they hold on entry;
/// callers normally start them from `init` too.
pub fn run_federation<M: LocalModel + ?Sized>(
    model: &M,
    clients: &mut [ClientState],
    init: &[f64],
    cfg: &FedConfig,
) -> Result<FederationResult> {
    let work = AdamLocalUpdate { model, opts: cfg.train, seed: cfg.seed };
    run_federation_with(model, &work, clients, init, cfg)
}

/// As [`run_federation`] with a caller-supplied local update.
pub fn run_federation_with<M: LocalModel + ?Sized, U: LocalUpdate + ?Sized>(
    model: &M,
    work: &U,
    clients: &mut [ClientState],
    init: &[f64],
    cfg: &FedConfig,
) -> Result<FederationResult> {
    cfg.validate()?;
    if clients.is_empty() {
        return Err(Error::Empty("clients"));
    }
    if init.len() != model.param_count() {
        return Err(Error::Length { expected: model.param_count(), actual: init.len() });
    }
    let channels = model.channels().max(1);
    let mut server = init.to_vec();
    let mut best = server.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_round = 0u64;
    let mut since_best = 0usize;
    let mut logs = Vec::new();
    let (mut cum_down, mut cum_up) = (0u64, 0u64);
    let mut stopped_by = StopRule::MaxRounds;
    let patience = cfg.patience.filter(|&p| p > 0);

    for n in 0..cfg.max_rounds as u64 {
        let plan = draw_round_plan(cfg.seed, n, cfg.policy, &cfg.ratios, clients.len(), server.len())?;
        let out = fed_round(&server, clients, &plan, work)?;
        server = out.global;
        cum_down += out.downlink;
        cum_up += out.uplink;

        let (sse, points) = pooled(model, &server, clients, |c| &c.train)?;
        if points == 0 {
            return Err(Error::Empty("training windows"));
        }
        let rows = clients.iter().map(|c| c.train.len()).sum::<usize>() * channels;
        let global_loss = sse / rows as f64;
        let (vsse, vpoints) = pooled(model, &server, clients, |c| &c.val)?;
        let rmse_val = (vpoints > 0).then(|| libm::sqrt(vsse / vpoints as f64));
        let (test_sse, test_points) = if cfg.eval_test_each_round {
            let (s, p) = pooled(model, &server, clients, |c| &c.test)?;
            (Some(s), Some(p))
        } else {
            (None, None)
        };
        log::debug!("{} round {n}: loss {global_loss:.6} down {cum_down} up {cum_up}", cfg.policy.name());
        logs.push(RoundLog {
            round: n,
            policy: cfg.policy,
            downlink: out.downlink,
            uplink: out.uplink,
            cum_downlink: cum_down,
            cum_uplink: cum_up,
            global_loss,
            client_losses: out.client_losses,
            selected: plan.selected,
            rmse_val,
            test_sse,
            test_points,
        });

        if global_loss < best_loss {
            best_loss = global_loss;
            best_round = n;
            best.copy_from_slice(&server);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if patience.is_some_and(|p| since_best >= p) {
            stopped_by = StopRule::Patience;
            break;
        }
    }
    Ok(FederationResult { best, best_round, best_loss, last: server, logs, stopped_by })
}
