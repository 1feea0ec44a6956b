//! The four pipeline stages: prepare, cluster, train, sweep.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use psgf_core::clustering::{cluster_clients, Clustering, DistanceMatrix};
use psgf_core::data::{
    aggregate_daily, clean_stations, make_windows, synth_dataset, DailySeries, SynthComponents, Window,
};
use psgf_core::federation::{run_federation, squared_error, ClientState, FedConfig, TrainOptions};
use psgf_core::model::Forecaster;
use psgf_core::train::{train_centralized, CentralConfig, EpochLog};
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::config::{ClusterOn, ExperimentConfig, PolicyName, Source};
use crate::dataset::{read_dataset, write_dataset, Manifest};
use crate::ingest::{day_number, ingest_daily_matrix, ingest_transactions, parse_date, to_daily_records};
use crate::roundlog::{read_rows, write_rows, RoundRow};

pub const DATASET_DIR: &str = "dataset";
pub const CLUSTERS_FILE: &str = "clusters.csv";
pub const CLUSTER_SUMMARY_FILE: &str = "cluster_summary.json";
pub const TRAIN_DIR: &str = "train";
pub const SWEEP_DIR: &str = "sweep";
pub const ROUNDLOG_FILE: &str = "roundlog.csv";
pub const EPOCHLOG_FILE: &str = "epochlog.csv";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const CONFIG_ECHO_FILE: &str = "config.toml";
pub const TRADEOFF_FILE: &str = "tradeoff.csv";

/// Loads or synthesizes the raw series and cleans them.
pub fn prepare(cfg: &ExperimentConfig) -> Result<(Vec<DailySeries>, Manifest)> {
    let d = &cfg.data;
    let (series, rejects) = match d.source {
        Source::Synth => {
            let comps = SynthComponents::profile(d.profile);
            let mut s = synth_dataset(d.clients, d.days, cfg.seed, &comps)?;
            let start = day_number(parse_date(&d.start_date).context("data.start_date")?);
            for c in &mut s {
                c.start_day = start;
            }
            (s, Vec::new())
        }
        Source::Transactions => {
            let path = d.path.as_deref().context("data.path is required")?;
            let (records, rejects) = ingest_transactions(path)?;
            (aggregate_daily(&to_daily_records(&records)), rejects)
        }
        Source::Nn5 => {
            let path = d.path.as_deref().context("data.path is required")?;
            (ingest_daily_matrix(path)?, Vec::new())
        }
    };
    let (kept, report) = clean_stations(series, d.slack_days);
    let source = match d.source {
        Source::Synth => format!("synth:{}", serde_json::to_value(d.profile)?.as_str().unwrap_or("?")),
        Source::Transactions => "transactions".into(),
        Source::Nn5 => "nn5".into(),
    };
    let mut manifest = Manifest::new(&source, cfg.seed, &kept);
    manifest.cleaning = Some(report);
    manifest.rejects = rejects;
    Ok((kept, manifest))
}

pub fn cmd_prepare(cfg: &ExperimentConfig) -> Result<Manifest> {
    let (series, manifest) = prepare(cfg)?;
    write_dataset(&cfg.output_dir.join(DATASET_DIR), &series, &manifest)?;
    Ok(manifest)
}

/// DTW k-medoids over the clients' series.
pub fn cluster_series(cfg: &ExperimentConfig, series: &[DailySeries]) -> Result<Clustering> {
    if series.is_empty() {
        bail!("no clients to cluster");
    }
    let fractions = cfg.data.fractions();
    let inputs: Vec<&[f64]> = series
        .iter()
        .map(|s| match cfg.data.cluster_on {
            ClusterOn::Full => &s.values[..],
            ClusterOn::Train => &s.values[..fractions.boundaries(s.len()).0.max(1)],
        })
        .collect();
    let d = DistanceMatrix::dtw(&inputs, true)?;
    Ok(cluster_clients(&d, cfg.train.clusters.min(series.len()), cfg.seed)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub client_id: String,
    pub cluster_id: usize,
    pub medoid_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub k: usize,
    pub sizes: Vec<usize>,
    pub medoids: Vec<String>,
    pub cost: f64,
    pub cost_trace: Vec<f64>,
}

pub fn cmd_cluster(cfg: &ExperimentConfig) -> Result<ClusterSummary> {
    let (series, _) = read_dataset(&cfg.output_dir.join(DATASET_DIR))?;
    let c = cluster_series(cfg, &series)?;
    let rows: Vec<ClusterRow> = series
        .iter()
        .zip(&c.assignment)
        .map(|(s, &k)| ClusterRow {
            client_id: s.client_id.clone(),
            cluster_id: k,
            medoid_id: series[c.medoids[k]].client_id.clone(),
        })
        .collect();
    write_rows(&cfg.output_dir.join(CLUSTERS_FILE), &rows)?;
    let summary = ClusterSummary {
        k: c.k(),
        sizes: c.sizes(),
        medoids: c.medoids.iter().map(|&m| series[m].client_id.clone()).collect(),
        cost: c.cost,
        cost_trace: c.cost_trace.clone(),
    };
    fs::write(cfg.output_dir.join(CLUSTER_SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

/// Cluster index per client, in dataset order.
pub fn read_assignment(cfg: &ExperimentConfig, series: &[DailySeries]) -> Result<Vec<usize>> {
    let path = cfg.output_dir.join(CLUSTERS_FILE);
    if !path.exists() {
        if cfg.train.clusters == 1 || cfg.train.policy == PolicyName::Centralized {
            return Ok(vec![0; series.len()]);
        }
        bail!("{} not found; run `psgf cluster` first", path.display());
    }
    let rows: Vec<ClusterRow> = read_rows(&path)?;
    series
        .iter()
        .map(|s| {
            rows.iter()
                .find(|r| r.client_id == s.client_id)
                .map(|r| r.cluster_id)
                .with_context(|| format!("client {} missing from {}", s.client_id, path.display()))
        })
        .collect()
}

struct ClientData {
    id: String,
    train: Vec<Window>,
    val: Vec<Window>,
    test: Vec<Window>,
}

fn client_windows(cfg: &ExperimentConfig, series: &[DailySeries]) -> Result<Vec<Option<ClientData>>> {
    let (l, t) = (cfg.model.lookback, cfg.model.horizon);
    series
        .iter()
        .map(|s| {
            if s.len() < l + t {
                log::warn!("client {} has {} days, fewer than lookback + horizon; skipped", s.client_id, s.len());
                return Ok(None);
            }
            let w = make_windows(&s.values, l, t, cfg.data.fractions())?;
            Ok(Some(ClientData {
                id: s.client_id.clone(),
                train: w.train.windows,
                val: w.val.windows,
                test: w.test.windows,
            }))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub cluster: usize,
    pub clients: Vec<String>,
    pub rounds: u64,
    pub best_round: u64,
    pub best_loss: f64,
    pub stopped_by: String,
    pub cum_downlink: u64,
    pub cum_uplink: u64,
    pub test_sse: f64,
    pub test_points: usize,
    pub test_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub seed: u64,
    pub policy: String,
    pub param_count: usize,
    pub clusters: Vec<ClusterReport>,
    pub pooled_rmse: f64,
    pub test_points: usize,
    pub total_downlink: u64,
    pub total_uplink: u64,
    pub total_comm: u64,
    pub rounds_executed: u64,
    pub wall_time_secs: f64,
    pub config: ExperimentConfig,
}

impl RunReport {
    /// Human-readable summary table.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "policy {}  seed {}  params {}  version {}\n\n",
            self.policy, self.seed, self.param_count, self.version
        );
        s += "cluster  clients  rounds  best  downlink      uplink        test_rmse\n";
        for c in &self.clusters {
            s += &format!(
                "{:<8} {:<8} {:<7} {:<5} {:<13} {:<13} {:.6}\n",
                c.cluster,
                c.clients.len(),
                c.rounds,
                c.best_round,
                c.cum_downlink,
                c.cum_uplink,
                c.test_rmse
            );
        }
        s += &format!(
            "\npooled test RMSE {:.6} over {} points\ncommunication: downlink {} uplink {} total {}\nwall time {:.1}s\n",
            self.pooled_rmse, self.test_points, self.total_downlink, self.total_uplink, self.total_comm, self.wall_time_secs
        );
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

impl From<&EpochLog> for EpochRow {
    fn from(e: &EpochLog) -> Self {
        EpochRow { epoch: e.epoch, train_loss: e.train_loss, val_loss: e.val_loss, lr: e.lr }
    }
}

/// Everything one training run produces.
pub struct TrainOutcome {
    pub report: RunReport,
    pub rounds: Vec<RoundRow>,
    pub epochs: Vec<EpochRow>,
    pub model: Forecaster,
    /// Best parameters per cluster (a single entry for centralized runs).
    pub checkpoints: Vec<(usize, Vec<f64>)>,
}

/// Trains according to `cfg.train.policy` on in-memory series.
pub fn train(cfg: &ExperimentConfig, series: &[DailySeries], assignment: &[usize]) -> Result<TrainOutcome> {
    let started = Instant::now();
    if assignment.len() != series.len() {
        bail!("cluster assignment covers {} clients, dataset has {}", assignment.len(), series.len());
    }
    let model = Forecaster::new(cfg.model.forecast())?;
    let init = model.layout().init(cfg.seed).into_inner();
    let data = client_windows(cfg, series)?;
    let t = &cfg.train;
    let mut clusters = Vec::new();
    let mut rounds = Vec::new();
    let mut epochs = Vec::new();
    let mut checkpoints = Vec::new();

    match t.policy.federated() {
        None => {
            let all: Vec<&ClientData> = data.iter().flatten().collect();
            let pool = |f: fn(&ClientData) -> &Vec<Window>| -> Vec<Window> {
                all.iter().flat_map(|c| f(c).iter().cloned()).collect()
            };
            let (train_w, val_w, test_w) = (pool(|c| &c.train), pool(|c| &c.val), pool(|c| &c.test));
            let cc = CentralConfig {
                max_epochs: t.max_epochs,
                patience: t.patience_epochs,
                batch_size: t.batch_size,
                base_lr: t.base_lr,
                peak_lr: t.peak_lr,
                seed: cfg.seed,
            };
            let res = train_centralized(&model, &init, &train_w, &val_w, &cc)?;
            let (sse, points) = squared_error(&model, &res.best, &test_w)?;
            epochs = res.history.iter().map(EpochRow::from).collect();
            clusters.push(ClusterReport {
                cluster: 0,
                clients: all.iter().map(|c| c.id.clone()).collect(),
                rounds: res.history.len() as u64,
                best_round: res.best_epoch as u64,
                best_loss: res.best_val,
                stopped_by: if res.history.len() < t.max_epochs { "patience" } else { "max_rounds" }.into(),
                cum_downlink: 0,
                cum_uplink: 0,
                test_sse: sse,
                test_points: points,
                test_rmse: (sse / points.max(1) as f64).sqrt(),
            });
            checkpoints.push((0, res.best));
        }
        Some(policy) => {
            let k = assignment.iter().copied().max().map_or(0, |m| m + 1);
            for c in 0..k {
                let members: Vec<&ClientData> = data
                    .iter()
                    .zip(assignment)
                    .filter(|(d, &a)| a == c && d.is_some())
                    .filter_map(|(d, _)| d.as_ref())
                    .collect();
                if members.is_empty() {
                    log::warn!("cluster {c} has no usable clients");
                    continue;
                }
                let mut states: Vec<ClientState> = members
                    .iter()
                    .enumerate()
                    .map(|(i, d)| ClientState::new(i, &init, t.lr, d.train.clone(), d.val.clone(), d.test.clone()))
                    .collect();
                let fc = FedConfig {
                    policy,
                    ratios: t.ratios(),
                    train: TrainOptions { epochs: t.local_epochs, batch_size: t.batch_size, lr: t.lr },
                    max_rounds: t.max_rounds,
                    patience: Some(t.patience),
                    seed: cfg.seed.wrapping_add(c as u64),
                    eval_test_each_round: t.eval_test_each_round,
                };
                let res = run_federation(&model, &mut states, &init, &fc).with_context(|| format!("cluster {c}"))?;
                let (mut sse, mut points) = (0.0, 0usize);
                for s in &states {
                    let (a, b) = squared_error(&model, &res.best, &s.test)?;
                    sse += a;
                    points += b;
                }
                let last = res.logs.last().expect("at least one round");
                clusters.push(ClusterReport {
                    cluster: c,
                    clients: members.iter().map(|d| d.id.clone()).collect(),
                    rounds: res.logs.len() as u64,
                    best_round: res.best_round,
                    best_loss: res.best_loss,
                    stopped_by: serde_json::to_value(res.stopped_by)?.as_str().unwrap_or("?").into(),
                    cum_downlink: last.cum_downlink,
                    cum_uplink: last.cum_uplink,
                    test_sse: sse,
                    test_points: points,
                    test_rmse: (sse / points.max(1) as f64).sqrt(),
                });
                rounds.extend(res.logs.iter().map(|l| RoundRow::new(c, l)));
                checkpoints.push((c, res.best));
            }
        }
    }
    if clusters.is_empty() {
        bail!("no client has enough data for lookback {} + horizon {}", cfg.model.lookback, cfg.model.horizon);
    }
    let sse: f64 = clusters.iter().map(|c| c.test_sse).sum();
    let points: usize = clusters.iter().map(|c| c.test_points).sum();
    let (down, up) = clusters.iter().fold((0, 0), |(d, u), c| (d + c.cum_downlink, u + c.cum_uplink));
    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        policy: t.policy.as_str().into(),
        param_count: model.param_count(),
        pooled_rmse: if points > 0 { (sse / points as f64).sqrt() } else { f64::NAN },
        test_points: points,
        total_downlink: down,
        total_uplink: up,
        total_comm: down + up,
        rounds_executed: clusters.iter().map(|c| c.rounds).sum(),
        clusters,
        wall_time_secs: started.elapsed().as_secs_f64(),
        config: cfg.clone(),
    };
    Ok(TrainOutcome { report, rounds, epochs, model, checkpoints })
}

/// Writes config echo, logs, report and checkpoints into `dir`.
pub fn write_train_outputs(dir: &Path, cfg: &ExperimentConfig, out: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(CONFIG_ECHO_FILE), cfg.to_toml())?;
    if cfg.train.policy == PolicyName::Centralized {
        write_rows(&dir.join(EPOCHLOG_FILE), &out.epochs)?;
    } else {
        write_rows(&dir.join(ROUNDLOG_FILE), &out.rounds)?;
    }
    fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(&out.report)? + "\n")?;
    fs::write(dir.join(REPORT_TEXT_FILE), out.report.to_text())?;
    for (c, params) in &out.checkpoints {
        save_checkpoint(&dir.join(format!("checkpoint_cluster{c}.json")), &out.model, params)?;
    }
    Ok(())
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunReport> {
    let (series, _) = read_dataset(&cfg.output_dir.join(DATASET_DIR))?;
    let assignment = read_assignment(cfg, &series)?;
    let out = train(cfg, &series, &assignment)?;
    write_train_outputs(&cfg.output_dir.join(TRAIN_DIR), cfg, &out)?;
    Ok(out.report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub policy: String,
    pub select_ratio: f64,
    pub share_ratio: f64,
    pub forward_ratio: f64,
    pub rounds: u64,
    pub cum_downlink: u64,
    pub cum_uplink: u64,
    pub total_comm: u64,
    pub pooled_rmse: f64,
    pub run_dir: String,
}

/// Grid points `(policy, share, forward)` implied by the sweep section.
pub fn sweep_points(cfg: &ExperimentConfig) -> Vec<(PolicyName, f64, f64)> {
    let s = &cfg.sweep;
    let mut pts = Vec::new();
    for &p in &s.policies {
        match p {
            PolicyName::Centralized => pts.push((p, 1.0, 0.0)),
            PolicyName::Online => pts.push((p, 1.0, 0.0)),
            PolicyName::Pso => pts.extend(s.share_ratios.iter().map(|&r| (p, r, 0.0))),
            PolicyName::Psgf => {
                for &r in &s.share_ratios {
                    pts.extend(s.forward_ratios.iter().map(|&f| (p, r, f)));
                }
            }
        }
    }
    pts
}

/// Runs every grid point with the base seed and writes `tradeoff.csv`,
/// sorted by total communication then RMSE.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<TradeoffRow>> {
    let (series, _) = read_dataset(&cfg.output_dir.join(DATASET_DIR))?;
    let assignment = read_assignment(cfg, &series)?;
    let root = cfg.output_dir.join(SWEEP_DIR);
    let mut rows = Vec::new();
    for (policy, share, forward) in sweep_points(cfg) {
        let mut point = cfg.clone();
        point.train.policy = policy;
        point.train.share_ratio = share;
        point.train.forward_ratio = forward;
        point.validate()?;
        let label = format!("{}_s{share}_f{forward}", policy.as_str());
        let dir: PathBuf = root.join(&label);
        let out = train(&point, &series, &assignment).with_context(|| format!("sweep point {label}"))?;
        write_train_outputs(&dir, &point, &out)?;
        let r = &out.report;
        log::info!("{label}: comm {} rmse {:.6}", r.total_comm, r.pooled_rmse);
        rows.push(TradeoffRow {
            policy: policy.as_str().into(),
            select_ratio: point.train.select_ratio,
            share_ratio: share,
            forward_ratio: forward,
            rounds: r.rounds_executed,
            cum_downlink: r.total_downlink,
            cum_uplink: r.total_uplink,
            total_comm: r.total_comm,
            pooled_rmse: r.pooled_rmse,
            run_dir: label,
        });
    }
    rows.sort_by(|a, b| a.total_comm.cmp(&b.total_comm).then(a.pooled_rmse.total_cmp(&b.pooled_rmse)));
    write_rows(&root.join(TRADEOFF_FILE), &rows)?;
    Ok(rows)
}
