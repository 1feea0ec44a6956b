use alloc::vec;
use alloc::vec::Vec;

use super::client::{ClientState, LocalUpdate};
use super::plan::{Mask, Policy, RoundPlan};
use crate::{Error, Result};

/// Copies `source[j]` into `target[j]` for every `j` in `mask`.
pub fn apply_mask(target: &mut [f64], source: &[f64], mask: &Mask) {
    for &j in mask.indices() {
        target[j] = source[j];
    }
}

/// Server aggregation: for every coordinate,
/// `w_next[j] = (1/C) · Σ_i (j ∈ R_i ? w_i[j] : w_n[j])`
/// over the reports `(R_i, w_i)` in the order given.
pub fn aggregate(server: &[f64], reports: &[(&Mask, &[f64])]) -> Result<Vec<f64>> {
    if reports.is_empty() {
        return Err(Error::Empty("aggregation reports"));
    }
    let mut acc = vec![0.0; server.len()];
    let mut contribution = vec![0.0; server.len()];
    for (mask, local) in reports {
        if local.len() != server.len() {
            return Err(Error::Length { expected: server.len(), actual: local.len() });
        }
        contribution.copy_from_slice(server);
        apply_mask(&mut contribution, local, mask);
        for (a, c) in acc.iter_mut().zip(&contribution) {
            *a += c;
        }
    }
    let c = reports.len() as f64;
    for a in &mut acc {
        *a /= c;
    }
    Ok(acc)
}

/// New global model, scalars sent each way, and each client's training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub global: Vec<f64>,
    pub downlink: u64,
    pub uplink: u64,
    pub client_losses: Vec<Option<f64>>,
}

/// One round of the plan's policy.
///
/// 1. Download: selected clients overwrite their exchange-mask coordinates
///    with the server's values (the full vector under Online); under PSGF
///    unselected clients overwrite their forward-mask coordinates.
/// 2. Local training: selected clients always; unselected clients under
///    PSO and PSGF only.
/// 3. Upload and aggregation over the selected clients' report masks.
pub fn fed_round<U: LocalUpdate + ?Sized>(
    server: &[f64],
    clients: &mut [ClientState],
    plan: &RoundPlan,
    work: &U,
) -> Result<RoundOutcome> {
    if plan.num_clients() != clients.len() {
        return Err(Error::Length { expected: plan.num_clients(), actual: clients.len() });
    }
    if plan.dim != server.len() {
        return Err(Error::Length { expected: plan.dim, actual: server.len() });
    }
    let mut downlink = 0u64;
    let mut uplink = 0u64;
    let mut client_losses = vec![None; clients.len()];

    for (i, client) in clients.iter_mut().enumerate() {
        if client.params.len() != server.len() {
            return Err(Error::Length { expected: server.len(), actual: client.params.len() });
        }
        let mask = match (&plan.exchange[i], &plan.forward[i]) {
            (Some(m), _) => Some(m),
            (None, Some(f)) => Some(f),
            (None, None) => None,
        };
        if let Some(mask) = mask {
            apply_mask(&mut client.params, server, mask);
            downlink += mask.len() as u64;
        }
        let trains = plan.is_selected(i) || plan.policy != Policy::Online;
        if trains {
            client_losses[i] = work.update(client, plan.round)?;
        }
    }

    let mut reports = Vec::with_capacity(plan.selected.len());
    for &i in &plan.selected {
        let mask = plan.report[i].as_ref().ok_or(Error::Config("selected client without report mask".into()))?;
        uplink += mask.len() as u64;
        reports.push((mask, clients[i].params.as_slice()));
    }
    let global = aggregate(server, &reports)?;
    Ok(RoundOutcome { global, downlink, uplink, client_losses })
}

fn expect_policy(plan: &RoundPlan, policy: Policy) -> Result<()> {
    if plan.policy != policy {
        return Err(Error::Config(alloc::format!(
            "plan drawn for {} used in a {} round",
            plan.policy.name(),
            policy.name()
        )));
    }
    Ok(())
}

/// Full download, local training on selected clients only, full upload.
pub fn online_fed_round<U: LocalUpdate + ?Sized>(
    server: &[f64],
    clients: &mut [ClientState],
    plan: &RoundPlan,
    work: &U,
) -> Result<RoundOutcome> {
    expect_policy(plan, Policy::Online)?;
    fed_round(server, clients, plan, work)
}

/// Partial exchange with selected clients; unselected clients train silently.
pub fn pso_fed_round<U: LocalUpdate + ?Sized>(
    server: &[f64],
    clients: &mut [ClientState],
    plan: &RoundPlan,
    work: &U,
) -> Result<RoundOutcome> {
    expect_policy(plan, Policy::Pso)?;
    fed_round(server, clients, plan, work)
}

/// PSO-Fed plus forwarding a few server coordinates to unselected clients.
pub fn psgf_fed_round<U: LocalUpdate + ?Sized>(
    server: &[f64],
    clients: &mut [ClientState],
    plan: &RoundPlan,
    work: &U,
) -> Result<RoundOutcome> {
    expect_policy(plan, Policy::Psgf)?;
    fed_round(server, clients, plan, work)
}
