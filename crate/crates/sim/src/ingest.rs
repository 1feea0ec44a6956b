//! Readers for EV transaction logs and NN5-style daily matrices.
//!
//! Transaction logs are CSV files with the header
//! `station_id,transaction_id,date,time,energy_kwh`; dates are `YYYY-MM-DD`
//! or `DD/MM/YYYY`, times `HH:MM[:SS]`. Daily matrices have a `date` column
//! followed by one column per client; empty or `NaN` cells are missing days.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveTime};
use psgf_core::data::{DailyRecord, DailySeries};
use serde::{Deserialize, Serialize};

pub const TRANSACTION_COLUMNS: [&str; 5] = ["station_id", "transaction_id", "date", "time", "energy_kwh"];

/// Fraction of malformed rows above which ingestion aborts.
pub const MAX_REJECT_FRACTION: f64 = 0.10;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: missing column `{column}`; expected header {expected}")]
    Schema { path: PathBuf, column: String, expected: String },
    #[error("{path}: {rejected} of {total} rows are malformed (limit 10%); first problem: {first}")]
    TooManyRejects { path: PathBuf, rejected: usize, total: usize, first: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransactionRecord {
    pub station: String,
    pub transaction: String,
    pub date: NaiveDate,
    pub time: NaiveTime,
    pub energy: f64,
}

/// A row that could not be used, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub line: u64,
    pub reason: String,
}

pub fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date")
}

pub fn day_number(date: NaiveDate) -> i64 {
    (date - epoch()).num_days()
}

pub fn date_of(day: i64) -> NaiveDate {
    epoch() + chrono::Duration::days(day)
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    ["%Y-%m-%d", "%d/%m/%Y"].iter().find_map(|f| NaiveDate::parse_from_str(s, f).ok())
}

fn parse_time(s: &str) -> Option<NaiveTime> {
    let s = s.trim();
    ["%H:%M:%S", "%H:%M"].iter().find_map(|f| NaiveTime::parse_from_str(s, f).ok())
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.into(), source })
}

fn parse_transaction(row: &csv::StringRecord, idx: &[usize; 5]) -> Result<TransactionRecord, String> {
    let get = |i: usize| row.get(idx[i]).map(str::trim).unwrap_or("");
    let station = get(0);
    if station.is_empty() {
        return Err("empty station_id".into());
    }
    let date = parse_date(get(2)).ok_or_else(|| format!("bad date `{}`", get(2)))?;
    let time = parse_time(get(3)).ok_or_else(|| format!("bad time `{}`", get(3)))?;
    let energy: f64 = get(4).parse().map_err(|_| format!("bad energy `{}`", get(4)))?;
    if !energy.is_finite() || energy < 0.0 {
        return Err(format!("energy {energy} must be a non-negative number"));
    }
    Ok(TransactionRecord { station: station.into(), transaction: get(1).into(), date, time, energy })
}

/// Parses a transaction log. Malformed rows are returned as rejects unless
/// they exceed [`MAX_REJECT_FRACTION`] of all rows.
pub fn ingest_transactions(path: &Path) -> Result<(Vec<TransactionRecord>, Vec<Reject>), IngestError> {
    let text = read_text(path)?;
    if text.trim().is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let csv_err = |source| IngestError::Csv { path: path.into(), source };
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let mut idx = [0usize; 5];
    for (slot, col) in idx.iter_mut().zip(TRANSACTION_COLUMNS) {
        *slot = headers.iter().position(|h| h.trim() == col).ok_or_else(|| IngestError::Schema {
            path: path.into(),
            column: col.into(),
            expected: TRANSACTION_COLUMNS.join(","),
        })?;
    }
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line());
        match parse_transaction(&row, &idx) {
            Ok(r) => records.push(r),
            Err(reason) => rejects.push(Reject { line, reason }),
        }
    }
    let total = records.len() + rejects.len();
    if total > 0 && rejects.len() as f64 > MAX_REJECT_FRACTION * total as f64 {
        return Err(IngestError::TooManyRejects {
            path: path.into(),
            rejected: rejects.len(),
            total,
            first: rejects[0].reason.clone(),
        });
    }
    Ok((records, rejects))
}

pub fn to_daily_records(records: &[TransactionRecord]) -> Vec<DailyRecord> {
    records
        .iter()
        .map(|r| DailyRecord { station: r.station.clone(), day: day_number(r.date), energy: r.energy })
        .collect()
}

/// Reads a one-column-per-client daily matrix. Dates absent from the file
/// inside the covered range become missing days.
pub fn ingest_daily_matrix(path: &Path) -> Result<Vec<DailySeries>, IngestError> {
    let text = read_text(path)?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let csv_err = |source| IngestError::Csv { path: path.into(), source };
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.get(0).map(str::trim) != Some("date") {
        return Err(IngestError::Schema {
            path: path.into(),
            column: "date".into(),
            expected: "date,<client>,<client>,...".into(),
        });
    }
    let clients: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    let mut rows: BTreeMap<i64, Vec<Option<f64>>> = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |message: String| IngestError::Format { path: path.into(), message: format!("line {line}: {message}") };
        let date = parse_date(&row[0]).ok_or_else(|| bad(format!("bad date `{}`", &row[0])))?;
        let mut vals = Vec::with_capacity(clients.len());
        for cell in row.iter().skip(1) {
            let cell = cell.trim();
            if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                vals.push(None);
            } else {
                vals.push(Some(cell.parse::<f64>().map_err(|_| bad(format!("bad value `{cell}`")))?));
            }
        }
        if rows.insert(day_number(date), vals).is_some() {
            return Err(bad(format!("date {date} repeats")));
        }
    }
    let (Some((&first, _)), Some((&last, _))) = (rows.first_key_value(), rows.last_key_value()) else {
        return Ok(Vec::new());
    };
    let len = (last - first + 1) as usize;
    let mut out: Vec<DailySeries> = clients
        .iter()
        .map(|c| DailySeries { client_id: c.clone(), start_day: first, values: vec![0.0; len], missing: vec![true; len] })
        .collect();
    for (day, vals) in rows {
        let i = (day - first) as usize;
        for (s, v) in out.iter_mut().zip(vals) {
            if let Some(v) = v {
                s.values[i] = v;
                s.missing[i] = false;
            }
        }
    }
    Ok(out)
}
