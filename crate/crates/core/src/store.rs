//! Append-only bitemporal (SCD2) observation store.
//!
//! Each `(series, event_time)` key holds a chain of versions with disjoint
//! validity intervals `[valid_from, valid_to)` in transaction time. Nothing
//! is ever deleted; a correction closes the current version and appends a
//! new one. Queries reconstruct what was visible at any transaction time.
//!
//! Durability is a line-delimited JSON log with one record per version
//! event. The in-memory index is rebuilt by replaying that log on open.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::domain::{SeriesId, Timestamp};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("transaction time {tx} precedes current version valid_from {valid_from} for {series} @ {event_time}")]
    ClockRegression {
        series: SeriesId,
        event_time: Timestamp,
        tx: Timestamp,
        valid_from: Timestamp,
    },
    #[error("unknown series {0}")]
    UnknownSeries(SeriesId),
    #[error("empty event range [{0}, {1}]")]
    EmptyRange(Timestamp, Timestamp),
    #[error("provenance field `{0}` is empty")]
    InvalidProvenance(&'static str),
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("log record {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("store has no clock; use upsert_at")]
    NoClock,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub provider: String,
    pub endpoint: String,
    pub pull_time: Timestamp,
}

impl Provenance {
    pub fn new(provider: impl Into<String>, endpoint: impl Into<String>, pull_time: Timestamp) -> Self {
        Self {
            provider: provider.into(),
            endpoint: endpoint.into(),
            pull_time,
        }
    }

    fn validate(&self) -> Result<(), StoreError> {
        if self.provider.is_empty() {
            return Err(StoreError::InvalidProvenance("provider"));
        }
        if self.endpoint.is_empty() {
            return Err(StoreError::InvalidProvenance("endpoint"));
        }
        Ok(())
    }
}

/// One bitemporal fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionedObservation {
    pub series: SeriesId,
    pub event_time: Timestamp,
    pub value: f64,
    pub valid_from: Timestamp,
    pub valid_to: Option<Timestamp>,
    pub created_at: Timestamp,
    pub provenance: Provenance,
}

impl VersionedObservation {
    pub fn visible_at(&self, tx: Timestamp) -> bool {
        self.valid_from <= tx && self.valid_to.is_none_or(|to| tx < to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsertOutcome {
    Inserted,
    Superseded,
    Noop,
}

/// The series as it was visible at `tx_time`, restricted to an event range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsOfView {
    pub series: SeriesId,
    pub tx_time: Timestamp,
    pub points: Vec<(Timestamp, f64)>,
}

/// Log line. `Close` carries the full version with `valid_to` now set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord {
    Insert(VersionedObservation),
    Close(VersionedObservation),
}

struct LogWriter {
    path: PathBuf,
    out: BufWriter<File>,
    dirty: bool,
}

// Values compare by their bit pattern, which for finite f64 coincides with
// equality of the shortest round-trip decimal rendering.
fn same_value(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits()
}

#[derive(Default)]
pub struct Store {
    versions: Vec<VersionedObservation>,
    index: HashMap<SeriesId, BTreeMap<Timestamp, Vec<usize>>>,
    clock: Option<Arc<dyn Clock>>,
    log: Option<LogWriter>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("versions", &self.versions.len())
            .field("series", &self.index.len())
            .field("log", &self.log.as_ref().map(|l| l.path.clone()))
            .finish()
    }
}

impl Store {
    /// In-memory store without a clock; callers supply transaction times.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// In-memory store that stamps writes from `clock`.
    pub fn with_clock(clock: Arc<dyn Clock>) -> Self {
        Self {
            clock: Some(clock),
            ..Self::default()
        }
    }

    /// Opens (or creates) a durable store at `path`, replaying any existing log.
    pub fn open(path: impl AsRef<Path>, clock: Option<Arc<dyn Clock>>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut store = Self {
            clock,
            ..Self::default()
        };
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: LogRecord =
                    serde_json::from_str(&line).map_err(|e| StoreError::CorruptLog {
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                store.apply(record).map_err(|message| StoreError::CorruptLog {
                    line: i + 1,
                    message,
                })?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        store.log = Some(LogWriter {
            path,
            out: BufWriter::new(file),
            dirty: false,
        });
        Ok(store)
    }

    fn apply(&mut self, record: LogRecord) -> Result<(), String> {
        match record {
            LogRecord::Insert(obs) => {
                let chain = self
                    .index
                    .entry(obs.series.clone())
                    .or_default()
                    .entry(obs.event_time)
                    .or_default();
                if let Some(&last) = chain.last() {
                    if self.versions[last].valid_to.is_none() {
                        return Err("insert while a current version is open".into());
                    }
                }
                chain.push(self.versions.len());
                self.versions.push(obs);
            }
            LogRecord::Close(obs) => {
                let idx = self
                    .index
                    .get(&obs.series)
                    .and_then(|m| m.get(&obs.event_time))
                    .and_then(|c| c.last().copied())
                    .ok_or("close for unknown key")?;
                let current = &mut self.versions[idx];
                if current.valid_to.is_some() || current.valid_from != obs.valid_from {
                    return Err("close does not match the current version".into());
                }
                current.valid_to = obs.valid_to;
            }
        }
        Ok(())
    }

    fn append(&mut self, record: LogRecord) -> Result<(), StoreError> {
        if let Some(log) = self.log.as_mut() {
            serde_json::to_writer(&mut log.out, &record).map_err(std::io::Error::from)?;
            log.out.write_all(b"\n")?;
            log.dirty = true;
        }
        Ok(())
    }

    /// Flushes and fsyncs the log. Called once per ingestion batch.
    pub fn commit(&mut self) -> Result<(), StoreError> {
        if let Some(log) = self.log.as_mut() {
            if log.dirty {
                log.out.flush()?;
                log.out.get_ref().sync_data()?;
                log.dirty = false;
            }
        }
        Ok(())
    }

    pub fn register_series(&mut self, series: &SeriesId) {
        self.index.entry(series.clone()).or_default();
    }

    pub fn series(&self) -> BTreeSet<SeriesId> {
        self.index.keys().cloned().collect()
    }

    /// Upsert stamped with the store's clock.
    pub fn upsert(
        &mut self,
        series: &SeriesId,
        event_time: Timestamp,
        value: f64,
        provenance: Provenance,
    ) -> Result<UpsertOutcome, StoreError> {
        let tx = self.clock.as_ref().ok_or(StoreError::NoClock)?.now();
        self.upsert_at(series, event_time, value, provenance, tx)
    }

    /// Upsert at an explicit transaction time.
    pub fn upsert_at(
        &mut self,
        series: &SeriesId,
        event_time: Timestamp,
        value: f64,
        provenance: Provenance,
        tx_time: Timestamp,
    ) -> Result<UpsertOutcome, StoreError> {
        if !value.is_finite() {
            return Err(StoreError::NonFinite(value));
        }
        provenance.validate()?;
        let current = self
            .index
            .get(series)
            .and_then(|m| m.get(&event_time))
            .and_then(|c| c.last().copied())
            .filter(|&i| self.versions[i].valid_to.is_none());

        let new_version = VersionedObservation {
            series: series.clone(),
            event_time,
            value,
            valid_from: tx_time,
            valid_to: None,
            created_at: tx_time,
            provenance,
        };

        let Some(idx) = current else {
            self.append(LogRecord::Insert(new_version.clone()))?;
            self.apply(LogRecord::Insert(new_version)).expect("no open version");
            return Ok(UpsertOutcome::Inserted);
        };

        let cur = &self.versions[idx];
        if tx_time < cur.valid_from {
            return Err(StoreError::ClockRegression {
                series: series.clone(),
                event_time,
                tx: tx_time,
                valid_from: cur.valid_from,
            });
        }
        if same_value(cur.value, value) {
            return Ok(UpsertOutcome::Noop);
        }
        if tx_time == cur.valid_from {
            // A zero-length interval would violate valid_to > valid_from.
            return Err(StoreError::ClockRegression {
                series: series.clone(),
                event_time,
                tx: tx_time,
                valid_from: cur.valid_from,
            });
        }
        let mut closed = cur.clone();
        closed.valid_to = Some(tx_time);
        self.append(LogRecord::Close(closed.clone()))?;
        self.apply(LogRecord::Close(closed)).expect("current version open");
        self.append(LogRecord::Insert(new_version.clone()))?;
        self.apply(LogRecord::Insert(new_version)).expect("closed above");
        Ok(UpsertOutcome::Superseded)
    }

    fn chains(&self, series: &SeriesId) -> Result<&BTreeMap<Timestamp, Vec<usize>>, StoreError> {
        self.index
            .get(series)
            .ok_or_else(|| StoreError::UnknownSeries(series.clone()))
    }

    fn visible(&self, chain: &[usize], tx: Timestamp) -> Option<&VersionedObservation> {
        // Versions in a chain are ordered by valid_from.
        let pos = chain.partition_point(|&i| self.versions[i].valid_from <= tx);
        let v = &self.versions[*chain.get(pos.checked_sub(1)?)?];
        v.visible_at(tx).then_some(v)
    }

    /// Values visible at `tx_time` for event times in `[start, end]`.
    /// Event times without a visible version are omitted.
    pub fn as_of(
        &self,
        series: &SeriesId,
        start: Timestamp,
        end: Timestamp,
        tx_time: Timestamp,
    ) -> Result<AsOfView, StoreError> {
        if start > end {
            return Err(StoreError::EmptyRange(start, end));
        }
        let points = self
            .chains(series)?
            .range(start..=end)
            .filter_map(|(t, chain)| self.visible(chain, tx_time).map(|v| (*t, v.value)))
            .collect();
        Ok(AsOfView {
            series: series.clone(),
            tx_time,
            points,
        })
    }

    /// Like [`Store::as_of`] but returns the full version rows.
    pub fn versions_as_of(
        &self,
        series: &SeriesId,
        start: Timestamp,
        end: Timestamp,
        tx_time: Timestamp,
    ) -> Result<Vec<&VersionedObservation>, StoreError> {
        if start > end {
            return Err(StoreError::EmptyRange(start, end));
        }
        Ok(self
            .chains(series)?
            .range(start..=end)
            .filter_map(|(_, chain)| self.visible(chain, tx_time))
            .collect())
    }

    pub fn latest_event_time(
        &self,
        series: &SeriesId,
        tx_time: Timestamp,
    ) -> Result<Option<Timestamp>, StoreError> {
        Ok(self
            .chains(series)?
            .iter()
            .rev()
            .find(|(_, chain)| self.visible(chain, tx_time).is_some())
            .map(|(t, _)| *t))
    }

    /// Transaction time at which `event_time` first became visible.
    pub fn first_known(&self, series: &SeriesId, event_time: Timestamp) -> Option<Timestamp> {
        let chain = self.index.get(series)?.get(&event_time)?;
        chain.first().map(|&i| self.versions[i].valid_from)
    }

    /// Full version history of one key, oldest first.
    pub fn history(&self, series: &SeriesId, event_time: Timestamp) -> Vec<&VersionedObservation> {
        self.index
            .get(series)
            .and_then(|m| m.get(&event_time))
            .map(|c| c.iter().map(|&i| &self.versions[i]).collect())
            .unwrap_or_default()
    }

    /// Every version row in insertion order.
    pub fn rows(&self) -> &[VersionedObservation] {
        &self.versions
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeDelta, TimeZone, Utc};

    fn t(h: i64) -> Timestamp {
        Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap() + TimeDelta::hours(h)
    }

    fn prov(tx: Timestamp) -> Provenance {
        Provenance::new("synthetic", "feed", tx)
    }

    #[test]
    fn correction_scenario() {
        let s = SeriesId::new("p", "S");
        let mut store = Store::in_memory();
        let (t1, t2, t3) = (t(1), t(2), t(3));
        assert_eq!(store.upsert_at(&s, t(0), 100.0, prov(t1), t1).unwrap(), UpsertOutcome::Inserted);
        assert_eq!(store.upsert_at(&s, t(0), 100.0, prov(t2), t2).unwrap(), UpsertOutcome::Noop);
        assert_eq!(store.rows().len(), 1);
        assert_eq!(store.upsert_at(&s, t(0), 105.0, prov(t3), t3).unwrap(), UpsertOutcome::Superseded);
        let hist = store.history(&s, t(0));
        assert_eq!(hist.len(), 2);
        assert_eq!(hist[0].valid_to, Some(t3));
        assert_eq!(hist[1].valid_to, None);

        assert_eq!(store.as_of(&s, t(0), t(0), t2).unwrap().points, vec![(t(0), 100.0)]);
        assert_eq!(store.as_of(&s, t(0), t(0), t3).unwrap().points, vec![(t(0), 105.0)]);
        assert!(store.as_of(&s, t(0), t(0), t(0)).unwrap().points.is_empty());
    }

    #[test]
    fn clock_regression_is_rejected() {
        let s = SeriesId::new("p", "S");
        let mut store = Store::in_memory();
        store.upsert_at(&s, t(0), 1.0, prov(t(5)), t(5)).unwrap();
        let err = store.upsert_at(&s, t(0), 2.0, prov(t(4)), t(4)).unwrap_err();
        assert!(matches!(err, StoreError::ClockRegression { .. }));
    }

    #[test]
    fn unknown_series_and_latest() {
        let s = SeriesId::new("p", "S");
        let mut store = Store::in_memory();
        assert!(matches!(
            store.latest_event_time(&s, t(0)),
            Err(StoreError::UnknownSeries(_))
        ));
        store.register_series(&s);
        assert_eq!(store.latest_event_time(&s, t(10)).unwrap(), None);
        store.upsert_at(&s, t(1), 1.0, prov(t(1)), t(1)).unwrap();
        store.upsert_at(&s, t(2), 1.0, prov(t(3)), t(3)).unwrap();
        assert_eq!(store.latest_event_time(&s, t(3)).unwrap(), Some(t(2)));
        // the later point was created after tx = t(2)
        assert_eq!(store.latest_event_time(&s, t(2)).unwrap(), Some(t(1)));
    }

    #[test]
    fn rejects_bad_input() {
        let s = SeriesId::new("p", "S");
        let mut store = Store::in_memory();
        assert!(matches!(
            store.upsert_at(&s, t(0), f64::NAN, prov(t(0)), t(0)),
            Err(StoreError::NonFinite(_))
        ));
        assert!(matches!(
            store.upsert_at(&s, t(0), 1.0, Provenance::new("", "e", t(0)), t(0)),
            Err(StoreError::InvalidProvenance("provider"))
        ));
        store.register_series(&s);
        assert!(matches!(store.as_of(&s, t(2), t(1), t(0)), Err(StoreError::EmptyRange(..))));
    }

    #[test]
    fn log_replay_reproduces_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.log");
        let s = SeriesId::new("p", "S");
        let rows = {
            let mut store = Store::open(&path, None).unwrap();
            for i in 0..20 {
                store.upsert_at(&s, t(i % 7), (i % 3) as f64, prov(t(i)), t(i)).unwrap();
            }
            store.commit().unwrap();
            store.rows().to_vec()
        };
        let reopened = Store::open(&path, None).unwrap();
        assert_eq!(reopened.rows(), rows.as_slice());
    }

    #[test]
    fn corrupt_log_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.log");
        std::fs::write(&path, "{not json}\n").unwrap();
        assert!(matches!(
            Store::open(&path, None),
            Err(StoreError::CorruptLog { line: 1, .. })
        ));
    }
}
