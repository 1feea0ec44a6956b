use std::fs;
use std::path::Path;
use std::process::Command;

use psgf_sim::checkpoint::{load_checkpoint, save_checkpoint};
use psgf_sim::config::{ConfigError, ExperimentConfig, PolicyName, Source};
use psgf_sim::dataset::{read_dataset, write_dataset, Manifest};
use psgf_sim::experiment::{
    cmd_cluster, cmd_prepare, cmd_sweep, cmd_train, prepare, read_assignment, train, ClusterRow, CLUSTERS_FILE,
    ROUNDLOG_FILE, TRAIN_DIR,
};
use psgf_sim::ingest::{ingest_daily_matrix, ingest_transactions, to_daily_records, IngestError};
use psgf_sim::roundlog::{read_rows, RoundRow};
use psgf_core::data::{aggregate_daily, clean_stations};
use psgf_core::model::Forecaster;
use tempfile::TempDir;

fn small(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { seed: 3, output_dir: dir.to_path_buf(), ..Default::default() };
    cfg.data.clients = 6;
    cfg.data.days = 260;
    let m = &mut cfg.model;
    (m.lookback, m.horizon, m.patch_len, m.stride) = (64, 4, 16, 16);
    (m.d_model, m.heads, m.d_k, m.mlp_hidden) = (8, 2, 4, 16);
    cfg.train.max_rounds = 6;
    cfg.train.max_epochs = 3;
    cfg
}

fn write(dir: &TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn defaults_validate_and_round_trip_through_toml() {
    let cfg = ExperimentConfig::default();
    cfg.validate().unwrap();
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "c.toml", &cfg.to_toml());
    assert_eq!(ExperimentConfig::load(Some(&p), &[]).unwrap(), cfg);
}

#[test]
fn overrides_apply_with_and_without_quotes() {
    let o = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let cfg = ExperimentConfig::load(None, &o(&["train.share_ratio=0.4", "train.policy=pso", "seed=9"])).unwrap();
    assert_eq!(cfg.train.share_ratio, 0.4);
    assert_eq!(cfg.train.policy, PolicyName::Pso);
    assert_eq!(cfg.seed, 9);
    let cfg = ExperimentConfig::load(None, &o(&["train.policy=\"online\""])).unwrap();
    assert_eq!(cfg.train.policy, PolicyName::Online);
    assert!(matches!(ExperimentConfig::load(None, &o(&["nonsense"])), Err(ConfigError::Override(_))));
    assert!(matches!(ExperimentConfig::load(None, &o(&["train.bogus=1"])), Err(ConfigError::Parse(_))));
}

#[test]
fn invalid_fields_are_named() {
    let field_of = |f: fn(&mut ExperimentConfig)| {
        let mut c = ExperimentConfig::default();
        f(&mut c);
        match c.validate() {
            Err(ConfigError::Field { field, .. }) => field,
            other => panic!("expected field error, got {other:?}"),
        }
    };
    assert_eq!(field_of(|c| c.train.share_ratio = 1.5), "train.share_ratio");
    assert_eq!(field_of(|c| c.train.select_ratio = 0.0), "train.select_ratio");
    assert_eq!(field_of(|c| c.train.forward_ratio = -0.1), "train.forward_ratio");
    assert_eq!(field_of(|c| c.data.days = 10), "data.days");
    assert_eq!(field_of(|c| c.data.source = Source::Transactions), "data.path");
    assert_eq!(field_of(|c| c.model.stride = 0), "model");
    assert_eq!(field_of(|c| c.train.lr = 0.0), "train.lr");
    let mut c = ExperimentConfig::default();
    c.train.forward_ratio = 0.0;
    c.validate().unwrap();
}

const HEADER: &str = "station_id,transaction_id,date,time,energy_kwh\n";

#[test]
fn transactions_aggregate_to_daily_totals() {
    let dir = TempDir::new().unwrap();
    let p = write(
        &dir,
        "t.csv",
        &format!("{HEADER}A,1,2021-03-01,08:00,2.5\nA,2,2021-03-01,17:30:00,1.5\nB,3,02/03/2021,09:00,4.0\n"),
    );
    let (records, rejects) = ingest_transactions(&p).unwrap();
    assert_eq!(records.len(), 3);
    assert!(rejects.is_empty());
    let series = aggregate_daily(&to_daily_records(&records));
    assert_eq!(series.len(), 2);
    assert_eq!(series[0].client_id, "A");
    assert_eq!(series[0].values, vec![4.0]);
    assert_eq!(series[1].start_day, series[0].start_day + 1);
}

#[test]
fn gap_day_is_zero_filled_and_flagged() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "t.csv", &format!("{HEADER}A,1,2021-03-01,08:00,1\nA,2,2021-03-03,08:00,3\n"));
    let (records, _) = ingest_transactions(&p).unwrap();
    let s = &aggregate_daily(&to_daily_records(&records))[0];
    assert_eq!(s.values, vec![1.0, 0.0, 3.0]);
    assert_eq!(s.missing, vec![false, true, false]);
}

#[test]
fn bad_rows_are_rejected_with_reasons() {
    let dir = TempDir::new().unwrap();
    let mut text = HEADER.to_string();
    for i in 0..20 {
        text += &format!("A,{i},2021-03-01,08:00,1\n");
    }
    text += "A,x,2021-03-01,08:00,-2\n";
    let (records, rejects) = ingest_transactions(&write(&dir, "t.csv", &text)).unwrap();
    assert_eq!(records.len(), 20);
    assert_eq!(rejects.len(), 1);
    assert!(rejects[0].reason.contains("non-negative"));
    assert_eq!(rejects[0].line, 22);

    let many = format!("{HEADER}A,1,2021-03-01,08:00,1\nA,2,bad,08:00,1\nA,3,2021-03-01,8h,1\n");
    assert!(matches!(ingest_transactions(&write(&dir, "m.csv", &many)), Err(IngestError::TooManyRejects { .. })));
    let schema = "station,date,energy\nA,2021-03-01,1\n";
    assert!(matches!(ingest_transactions(&write(&dir, "s.csv", schema)), Err(IngestError::Schema { .. })));
    let (r, j) = ingest_transactions(&write(&dir, "e.csv", "")).unwrap();
    assert!(r.is_empty() && j.is_empty());
}

#[test]
fn cleaning_drops_stations_that_went_quiet() {
    let dir = TempDir::new().unwrap();
    let mut text = HEADER.to_string();
    // Stations A-D active through day 30; E stops on day 10.
    for (st, last) in [("A", 30), ("B", 30), ("C", 28), ("D", 24), ("E", 10)] {
        for d in 1..=last {
            text += &format!("{st},{st}{d},2021-01-{d:02},12:00,1\n");
        }
    }
    let (records, _) = ingest_transactions(&write(&dir, "t.csv", &text)).unwrap();
    let (kept, report) = clean_stations(aggregate_daily(&to_daily_records(&records)), 7);
    let ids: Vec<&str> = kept.iter().map(|s| s.client_id.as_str()).collect();
    assert_eq!(ids, ["A", "B", "C", "D"]);
    assert_eq!(report.dropped.len(), 1);
    assert_eq!(report.dropped[0].client_id, "E");
}

#[test]
fn daily_matrix_marks_blank_cells_missing() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "m.csv", "date,x,y\n2020-01-01,1,2\n2020-01-02,,NaN\n2020-01-04,3,4\n");
    let s = ingest_daily_matrix(&p).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(s[0].values, vec![1.0, 0.0, 0.0, 3.0]);
    assert_eq!(s[1].missing, vec![false, true, true, false]);
}

#[test]
fn prepare_is_idempotent_and_round_trips() {
    let dir = TempDir::new().unwrap();
    let cfg = small(dir.path());
    cmd_prepare(&cfg).unwrap();
    let first = fs::read(dir.path().join("dataset/series.csv")).unwrap();
    cmd_prepare(&cfg).unwrap();
    assert_eq!(first, fs::read(dir.path().join("dataset/series.csv")).unwrap());
    let (series, manifest) = read_dataset(&dir.path().join("dataset")).unwrap();
    let (fresh, _) = prepare(&cfg).unwrap();
    assert_eq!(series, fresh);
    assert_eq!(manifest.clients.len(), 6);
    assert_eq!(manifest.clients[0].start_date, "2020-01-01");

    let other = TempDir::new().unwrap();
    write_dataset(other.path(), &series, &Manifest::new("copy", 0, &series)).unwrap();
    assert_eq!(read_dataset(other.path()).unwrap().0, series);
}

#[test]
fn cluster_writes_one_row_per_client() {
    let dir = TempDir::new().unwrap();
    let mut cfg = small(dir.path());
    cfg.train.clusters = 2;
    cmd_prepare(&cfg).unwrap();
    let summary = cmd_cluster(&cfg).unwrap();
    assert_eq!(summary.k, 2);
    assert_eq!(summary.sizes.iter().sum::<usize>(), 6);
    let rows: Vec<ClusterRow> = read_rows(&dir.path().join(CLUSTERS_FILE)).unwrap();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        let medoid = rows.iter().find(|m| m.client_id == r.medoid_id).unwrap();
        assert_eq!(medoid.cluster_id, r.cluster_id);
    }
    let (series, _) = read_dataset(&dir.path().join("dataset")).unwrap();
    let a = read_assignment(&cfg, &series).unwrap();
    assert_eq!(a, rows.iter().map(|r| r.cluster_id).collect::<Vec<_>>());
}

#[test]
fn multi_cluster_training_needs_cluster_file() {
    let dir = TempDir::new().unwrap();
    let mut cfg = small(dir.path());
    cfg.train.clusters = 2;
    cmd_prepare(&cfg).unwrap();
    assert!(cmd_train(&cfg).is_err());
    cmd_cluster(&cfg).unwrap();
    let r = cmd_train(&cfg).unwrap();
    assert_eq!(r.clusters.len(), 2);
    let rows: Vec<RoundRow> = read_rows(&dir.path().join(TRAIN_DIR).join(ROUNDLOG_FILE)).unwrap();
    assert_eq!(rows.len() as u64, r.rounds_executed);
}

#[test]
fn counters_follow_closed_forms_end_to_end() {
    let dir = TempDir::new().unwrap();
    let mut cfg = small(dir.path());
    cfg.train.patience = 0;
    cfg.train.max_rounds = 3;
    let (series, _) = prepare(&cfg).unwrap();
    let zeros = vec![0; series.len()];
    let dim = Forecaster::new(cfg.model.forecast()).unwrap().param_count() as u64;
    let (rounds, c, unsel) = (3u64, 3u64, 3u64);
    let m = (0.3 * dim as f64).round() as u64;
    let f = (0.2 * dim as f64).round() as u64;

    let r = train(&cfg, &series, &zeros).unwrap().report;
    assert_eq!(r.total_uplink, rounds * c * m);
    assert_eq!(r.total_downlink, rounds * (c * m + unsel * f));

    cfg.train.policy = PolicyName::Online;
    let r = train(&cfg, &series, &zeros).unwrap().report;
    assert_eq!(r.total_comm, 2 * rounds * c * dim);
}

#[test]
fn psgf_without_forwarding_reports_like_pso() {
    let dir = TempDir::new().unwrap();
    let mut cfg = small(dir.path());
    cfg.train.forward_ratio = 0.0;
    let (series, _) = prepare(&cfg).unwrap();
    let zeros = vec![0; series.len()];
    let a = train(&cfg, &series, &zeros).unwrap();
    cfg.train.policy = PolicyName::Pso;
    let b = train(&cfg, &series, &zeros).unwrap();
    let strip = |rows: &[RoundRow]| rows.iter().map(|r| RoundRow { policy: String::new(), ..r.clone() }).collect::<Vec<_>>();
    assert_eq!(strip(&a.rounds), strip(&b.rounds));
    assert_eq!(a.report.pooled_rmse, b.report.pooled_rmse);
    assert_eq!(a.checkpoints, b.checkpoints);
}

#[test]
fn centralized_training_writes_epoch_log() {
    let dir = TempDir::new().unwrap();
    let mut cfg = small(dir.path());
    cfg.train.policy = PolicyName::Centralized;
    cmd_prepare(&cfg).unwrap();
    let r = cmd_train(&cfg).unwrap();
    assert_eq!(r.total_comm, 0);
    assert!(r.pooled_rmse.is_finite());
    let log = fs::read_to_string(dir.path().join("train/epochlog.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + r.rounds_executed as usize);
}

#[test]
fn checkpoint_round_trip_reproduces_predictions() {
    let dir = TempDir::new().unwrap();
    let cfg = small(dir.path());
    cmd_prepare(&cfg).unwrap();
    cmd_train(&cfg).unwrap();
    let (model, params) = load_checkpoint(&dir.path().join("train/checkpoint_cluster0.json")).unwrap();
    assert_eq!(model.config(), &cfg.model.forecast());
    let (series, _) = read_dataset(&dir.path().join("dataset")).unwrap();
    let input = &series[0].values[..64];
    let before = model.forecast(&params, input).unwrap();
    let p2 = dir.path().join("again.json");
    save_checkpoint(&p2, &model, &params).unwrap();
    let (model2, params2) = load_checkpoint(&p2).unwrap();
    assert_eq!(params, params2);
    assert_eq!(before, model2.forecast(&params2, input).unwrap());
    let text = fs::read_to_string(&p2).unwrap().replace("tokenizer.bias", "tokenizer.other");
    fs::write(&p2, text).unwrap();
    assert!(load_checkpoint(&p2).is_err());
}

#[test]
fn sweep_is_sorted_and_cheaper_with_less_sharing() {
    let dir = TempDir::new().unwrap();
    let mut cfg = small(dir.path());
    cfg.train.patience = 0;
    cfg.train.max_rounds = 2;
    cfg.sweep.share_ratios = vec![0.5, 0.2];
    cfg.sweep.forward_ratios = vec![0.1];
    cmd_prepare(&cfg).unwrap();
    let rows = cmd_sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.windows(2).all(|w| w[0].total_comm <= w[1].total_comm));
    let comm = |p: &str, s: f64| rows.iter().find(|r| r.policy == p && r.share_ratio == s).unwrap().total_comm;
    assert!(comm("pso", 0.2) < comm("pso", 0.5));
    assert!(comm("psgf", 0.2) < comm("psgf", 0.5));
    assert!(comm("pso", 0.5) < comm("psgf", 0.5));
    assert!(dir.path().join("sweep/tradeoff.csv").exists());
    assert!(dir.path().join("sweep/psgf_s0.2_f0.1/roundlog.csv").exists());
}

#[test]
fn cli_runs_all_stages_and_reports_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = small(dir.path());
    let path = dir.path().join("exp.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_psgf")).args(args).arg("--config").arg(&path).output().unwrap()
    };
    for stage in ["prepare", "cluster", "train"] {
        let out = run(&[stage]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(String::from_utf8_lossy(&run(&["train"]).stdout).contains("pooled test RMSE"));
    let out = run(&["train", "--set", "train.share_ratio=2"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("config") && err.contains("train.share_ratio"), "{err}");
}
