//! Per-round CSV export.

use std::path::Path;

use anyhow::{Context, Result};
use psgf_core::federation::RoundLog;
use serde::{Deserialize, Serialize};

/// One CSV row. Optional metrics are empty cells when not computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub cluster: usize,
    pub round: u64,
    pub policy: String,
    pub downlink: u64,
    pub uplink: u64,
    pub cum_downlink: u64,
    pub cum_uplink: u64,
    pub cum_total: u64,
    pub global_loss: f64,
    pub rmse_val: Option<f64>,
    pub test_sse: Option<f64>,
    pub test_points: Option<usize>,
    /// Selected client indices within the cluster, `;`-separated.
    pub selected: String,
}

impl RoundRow {
    pub fn new(cluster: usize, log: &RoundLog) -> Self {
        RoundRow {
            cluster,
            round: log.round,
            policy: log.policy.name().into(),
            downlink: log.downlink,
            uplink: log.uplink,
            cum_downlink: log.cum_downlink,
            cum_uplink: log.cum_uplink,
            cum_total: log.cum_downlink + log.cum_uplink,
            global_loss: log.global_loss,
            rmse_val: log.rmse_val,
            test_sse: log.test_sse,
            test_points: log.test_points,
            selected: log.selected.iter().map(usize::to_string).collect::<Vec<_>>().join(";"),
        }
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}
