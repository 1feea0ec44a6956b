//! Canonical per-client daily series on disk: `series.csv` + `manifest.json`.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use psgf_core::data::{CleaningReport, DailySeries};
use serde::{Deserialize, Serialize};

use crate::ingest::{date_of, day_number, parse_date, Reject};

pub const SERIES_FILE: &str = "series.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEntry {
    pub client_id: String,
    pub start_date: String,
    pub end_date: String,
    pub days: usize,
    pub missing_days: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub source: String,
    pub seed: u64,
    pub clients: Vec<ClientEntry>,
    pub cleaning: Option<CleaningReport>,
    pub rejects: Vec<Reject>,
}

impl Manifest {
    pub fn new(source: &str, seed: u64, series: &[DailySeries]) -> Self {
        let clients = series
            .iter()
            .map(|s| ClientEntry {
                client_id: s.client_id.clone(),
                start_date: date_of(s.start_day).to_string(),
                end_date: date_of(s.end_day()).to_string(),
                days: s.len(),
                missing_days: s.missing.iter().filter(|&&m| m).count(),
            })
            .collect();
        Manifest {
            version: env!("CARGO_PKG_VERSION").into(),
            source: source.into(),
            seed,
            clients,
            cleaning: None,
            rejects: Vec::new(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SeriesRow {
    client_id: String,
    date: String,
    value: f64,
    missing: u8,
}

pub fn write_dataset(dir: &Path, series: &[DailySeries], manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(SERIES_FILE);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    for s in series {
        for (i, (&v, &m)) in s.values.iter().zip(&s.missing).enumerate() {
            w.serialize(SeriesRow {
                client_id: s.client_id.clone(),
                date: date_of(s.start_day + i as i64).to_string(),
                value: v,
                missing: m as u8,
            })?;
        }
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(manifest)?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`], in manifest order.
pub fn read_dataset(dir: &Path) -> Result<(Vec<DailySeries>, Manifest)> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath)
        .with_context(|| format!("reading {} (run `psgf prepare` first)", mpath.display()))?;
    let manifest: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", mpath.display()))?;
    let spath = dir.join(SERIES_FILE);
    let mut rdr = csv::Reader::from_path(&spath).with_context(|| format!("reading {}", spath.display()))?;
    let mut series: Vec<DailySeries> = manifest
        .clients
        .iter()
        .map(|c| -> Result<DailySeries> {
            let start = parse_date(&c.start_date).with_context(|| format!("bad start date {}", c.start_date))?;
            Ok(DailySeries {
                client_id: c.client_id.clone(),
                start_day: day_number(start),
                values: Vec::with_capacity(c.days),
                missing: Vec::with_capacity(c.days),
            })
        })
        .collect::<Result<_>>()?;
    let index: std::collections::HashMap<String, usize> =
        series.iter().enumerate().map(|(i, s)| (s.client_id.clone(), i)).collect();
    for row in rdr.deserialize() {
        let row: SeriesRow = row?;
        let Some(&i) = index.get(&row.client_id) else {
            bail!("{}: client {} is not in the manifest", spath.display(), row.client_id);
        };
        let s = &mut series[i];
        let day = day_number(parse_date(&row.date).with_context(|| format!("bad date {}", row.date))?);
        if day != s.start_day + s.values.len() as i64 {
            bail!("{}: rows for {} are not consecutive at {}", spath.display(), row.client_id, row.date);
        }
        s.values.push(row.value);
        s.missing.push(row.missing != 0);
    }
    for (s, c) in series.iter().zip(&manifest.clients) {
        if s.len() != c.days {
            bail!("{}: client {} has {} days, manifest says {}", spath.display(), c.client_id, s.len(), c.days);
        }
    }
    Ok((series, manifest))
}
