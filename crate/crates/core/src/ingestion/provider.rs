//! Provider contract plus the two shipped implementations: a synthetic feed
//! and a fixture-backed stub standing in for real HTTP connectors.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::{DateTime, FixedOffset, NaiveDateTime, TimeZone, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{IsoDuration, SeriesId, SeriesInfo, Timestamp};
use crate::ratelimit::RateLimit;
use crate::sim::synthetic::SyntheticSeriesSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Synthetic,
    HttpStub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderDescriptor {
    pub name: String,
    pub kind: ProviderKind,
    pub series_catalog: Vec<SeriesInfo>,
    pub rate_limit: RateLimit,
    pub pull_interval: IsoDuration,
    /// How far back each pull reaches. Defaults to twice the pull interval.
    #[serde(default)]
    pub lookback: Option<IsoDuration>,
}

impl ProviderDescriptor {
    pub fn lookback(&self) -> IsoDuration {
        self.lookback
            .unwrap_or_else(|| IsoDuration::from_delta(self.pull_interval.times(2)))
    }

    pub fn serves(&self, series: &SeriesId) -> bool {
        self.series_catalog.iter().any(|s| s.id == *series)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.rate_limit.max_requests == 0 || !self.rate_limit.per.is_positive() {
            return Err(format!("provider {}: rate limit must be positive", self.name));
        }
        if !self.pull_interval.is_positive() {
            return Err(format!("provider {}: pull interval must be positive", self.name));
        }
        if let Some(fastest) = self.series_catalog.iter().map(|s| s.native_frequency.step()).min() {
            if self.pull_interval < fastest {
                return Err(format!(
                    "provider {}: pull interval {} is shorter than the fastest series step {}",
                    self.name, self.pull_interval, fastest
                ));
            }
        }
        Ok(())
    }
}

/// A raw provider timestamp. Zoned stamps are exact; local stamps are
/// resolved through the series' original time zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawStamp {
    Zoned(DateTime<FixedOffset>),
    Local(NaiveDateTime),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum StampError {
    #[error("local time {0} is ambiguous in the series time zone")]
    Ambiguous(NaiveDateTime),
    #[error("local time {0} does not exist in the series time zone")]
    Nonexistent(NaiveDateTime),
}

impl RawStamp {
    pub fn to_utc(self, tz: Tz) -> Result<Timestamp, StampError> {
        match self {
            RawStamp::Zoned(t) => Ok(t.with_timezone(&Utc)),
            RawStamp::Local(naive) => match tz.from_local_datetime(&naive) {
                chrono::LocalResult::Single(t) => Ok(t.with_timezone(&Utc)),
                chrono::LocalResult::Ambiguous(..) => Err(StampError::Ambiguous(naive)),
                chrono::LocalResult::None => Err(StampError::Nonexistent(naive)),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPoint {
    pub event_time: RawStamp,
    pub value: f64,
}

/// One provider response. Points may be unordered and may repeat earlier pulls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawBatch {
    pub series: SeriesId,
    pub points: Vec<RawPoint>,
    pub pull_time: Timestamp,
    pub endpoint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("series {0} is not served by this provider")]
    UnknownSeries(SeriesId),
}

pub trait Provider: Send {
    fn descriptor(&self) -> &ProviderDescriptor;

    /// Returns everything the provider publishes for `series` with event
    /// time in `(window_start, window_end]`, as seen at `window_end`.
    fn fetch(
        &mut self,
        series: &SeriesId,
        window_start: Timestamp,
        window_end: Timestamp,
    ) -> Result<RawBatch, ProviderError>;
}

/// Serves [`SyntheticSeriesSpec`]s, rendering stamps in each series' zone.
pub struct SyntheticProvider {
    descriptor: ProviderDescriptor,
    specs: BTreeMap<SeriesId, (SyntheticSeriesSpec, Tz)>,
}

impl SyntheticProvider {
    pub fn new(
        name: impl Into<String>,
        specs: Vec<SyntheticSeriesSpec>,
        rate_limit: RateLimit,
        pull_interval: IsoDuration,
        lookback: Option<IsoDuration>,
    ) -> Result<Self, String> {
        let name = name.into();
        let mut map = BTreeMap::new();
        for spec in &specs {
            spec.validate().map_err(|e| e.to_string())?;
            let tz = spec.series.timezone().map_err(|e| e.to_string())?;
            if map.insert(spec.series.id.clone(), (spec.clone(), tz)).is_some() {
                return Err(format!("duplicate synthetic series {}", spec.series.id));
            }
        }
        let descriptor = ProviderDescriptor {
            name,
            kind: ProviderKind::Synthetic,
            series_catalog: specs.into_iter().map(|s| s.series).collect(),
            rate_limit,
            pull_interval,
            lookback,
        };
        descriptor.validate()?;
        Ok(Self {
            descriptor,
            specs: map,
        })
    }

    pub fn spec(&self, series: &SeriesId) -> Option<&SyntheticSeriesSpec> {
        self.specs.get(series).map(|(s, _)| s)
    }
}

impl Provider for SyntheticProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn fetch(
        &mut self,
        series: &SeriesId,
        window_start: Timestamp,
        window_end: Timestamp,
    ) -> Result<RawBatch, ProviderError> {
        let (spec, tz) = self
            .specs
            .get(series)
            .ok_or_else(|| ProviderError::UnknownSeries(series.clone()))?;
        let mut points = Vec::new();
        for t in spec.grid(window_start, window_end) {
            let Some(value) = spec.published(t, window_end).expect("grid point") else {
                continue;
            };
            let local = t.with_timezone(tz).fixed_offset();
            points.push(RawPoint {
                event_time: RawStamp::Zoned(local),
                value,
            });
        }
        Ok(RawBatch {
            series: series.clone(),
            points,
            pull_time: window_end,
            endpoint: format!("synthetic://{}/{}", self.descriptor.name, series.external_id),
        })
    }
}

/// One line of a recorded fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub external_id: String,
    pub event_time: DateTime<FixedOffset>,
    pub value: f64,
}

/// Stand-in for a real HTTP connector: replays a recorded fixture file.
pub struct FixtureProvider {
    descriptor: ProviderDescriptor,
    records: BTreeMap<String, Vec<FixtureRecord>>,
    endpoint: String,
}

impl FixtureProvider {
    pub fn from_records(descriptor: ProviderDescriptor, records: Vec<FixtureRecord>, endpoint: impl Into<String>) -> Self {
        let mut by_series: BTreeMap<String, Vec<FixtureRecord>> = BTreeMap::new();
        for r in records {
            by_series.entry(r.external_id.clone()).or_default().push(r);
        }
        Self {
            descriptor,
            records: by_series,
            endpoint: endpoint.into(),
        }
    }

    /// Reads a JSON-lines fixture file.
    pub fn open(descriptor: ProviderDescriptor, path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureRecord = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}:{}: {e}", path.display(), i + 1),
                )
            })?;
            records.push(rec);
        }
        Ok(Self::from_records(descriptor, records, format!("fixture://{}", path.display())))
    }
}

impl Provider for FixtureProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn fetch(
        &mut self,
        series: &SeriesId,
        window_start: Timestamp,
        window_end: Timestamp,
    ) -> Result<RawBatch, ProviderError> {
        if !self.descriptor.serves(series) {
            return Err(ProviderError::UnknownSeries(series.clone()));
        }
        let points = self
            .records
            .get(&series.external_id)
            .into_iter()
            .flatten()
            .filter(|r| {
                let t = r.event_time.with_timezone(&Utc);
                t > window_start && t <= window_end
            })
            .map(|r| RawPoint {
                event_time: RawStamp::Zoned(r.event_time),
                value: r.value,
            })
            .collect();
        Ok(RawBatch {
            series: series.clone(),
            points,
            pull_time: window_end,
            endpoint: self.endpoint.clone(),
        })
    }
}
