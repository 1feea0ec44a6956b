use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Energy consumed by one station on one day, days counted from any fixed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyRecord {
    pub station: String,
    pub day: i64,
    pub energy: f64,
}

/// One value per calendar day starting at `start_day`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DailySeries {
    pub client_id: String,
    pub start_day: i64,
    pub values: Vec<f64>,
    /// `true` where the day had no observation and was zero-filled.
    pub missing: Vec<bool>,
}

impl DailySeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end_day(&self) -> i64 {
        self.start_day + self.values.len() as i64 - 1
    }

    /// Last day carrying an observation, if any.
    pub fn last_active_day(&self) -> Option<i64> {
        self.missing.iter().rposition(|m| !m).map(|i| self.start_day + i as i64)
    }
}

/// Sums records per station and day. Days inside a station's active span
/// with no records become zero and are flagged missing. Stations come out
/// sorted by id.
pub fn aggregate_daily(records: &[DailyRecord]) -> Vec<DailySeries> {
    let mut by_station: BTreeMap<&str, BTreeMap<i64, f64>> = BTreeMap::new();
    for r in records {
        *by_station.entry(&r.station).or_default().entry(r.day).or_insert(0.0) += r.energy;
    }
    by_station
        .into_iter()
        .filter_map(|(station, days)| {
            let (&first, _) = days.first_key_value()?;
            let (&last, _) = days.last_key_value()?;
            let len = (last - first + 1) as usize;
            let mut values = vec![0.0; len];
            let mut missing = vec![true; len];
            for (day, energy) in days {
                let i = (day - first) as usize;
                values[i] = energy;
                missing[i] = false;
            }
            Some(DailySeries { client_id: station.into(), start_day: first, values, missing })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DroppedStation {
    pub client_id: String,
    pub last_active_day: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CleaningReport {
    pub global_end_day: Option<i64>,
    pub slack_days: i64,
    pub retained: Vec<String>,
    pub dropped: Vec<DroppedStation>,
}

/// Drops stations whose last observation is more than `slack_days` before
/// the latest observation of any station.
pub fn clean_stations(series: Vec<DailySeries>, slack_days: i64) -> (Vec<DailySeries>, CleaningReport) {
    let global_end = series.iter().filter_map(DailySeries::last_active_day).max();
    let mut report = CleaningReport { global_end_day: global_end, slack_days, ..Default::default() };
    let mut kept = Vec::with_capacity(series.len());
    for s in series {
        let last = s.last_active_day();
        let keep = matches!((last, global_end), (Some(l), Some(g)) if g - l <= slack_days);
        if keep {
            report.retained.push(s.client_id.clone());
            kept.push(s);
        } else {
            log::info!("dropping station {} (last active day {:?})", s.client_id, last);
            report.dropped.push(DroppedStation { client_id: s.client_id.clone(), last_active_day: last });
        }
    }
    (kept, report)
}
