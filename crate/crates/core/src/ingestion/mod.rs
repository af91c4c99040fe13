//! Pulling observations from providers into the bitemporal store.
//!
//! Each pull converts provider stamps to UTC, drops non-finite values and
//! unresolvable local times as malformed, and upserts the rest. Repeating a
//! pull is a no-op at the store level.

mod provider;
mod scheduler;

use std::collections::BTreeMap;

use chrono::TimeDelta;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

pub use provider::{
    FixtureProvider, FixtureRecord, Provider, ProviderDescriptor, ProviderError, ProviderKind, RawBatch,
    RawPoint, RawStamp, StampError, SyntheticProvider,
};
pub use scheduler::{PollRecord, PullSchedule};

use crate::domain::{Frequency, SeriesId, SeriesInfo, Timestamp};
use crate::ratelimit::RateLimiter;
use crate::store::{Provenance, Store, StoreError, UpsertOutcome};

/// Default staleness threshold in steps of the native frequency.
pub const DEFAULT_STALENESS_STEPS: u32 = 3;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("rate limited, retry after {0}")]
    RateLimited(TimeDelta),
    #[error("provider {provider} unavailable: {reason}")]
    ProviderUnavailable { provider: String, reason: String },
    #[error("series {0} does not belong to provider {1}")]
    ForeignSeries(SeriesId, String),
    #[error("unknown series {0}")]
    UnknownSeries(SeriesId),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub inserted: usize,
    pub superseded: usize,
    pub noop: usize,
    pub malformed: usize,
}

impl IngestReport {
    fn record(&mut self, outcome: UpsertOutcome) {
        match outcome {
            UpsertOutcome::Inserted => self.inserted += 1,
            UpsertOutcome::Superseded => self.superseded += 1,
            UpsertOutcome::Noop => self.noop += 1,
        }
    }

    pub fn merge(&mut self, other: IngestReport) {
        self.inserted += other.inserted;
        self.superseded += other.superseded;
        self.noop += other.noop;
        self.malformed += other.malformed;
    }
}

/// One admitted request against `provider` for `series`, written at `now`.
pub fn pull_and_ingest(
    provider: &mut dyn Provider,
    limiter: &mut RateLimiter,
    store: &mut Store,
    series: &SeriesInfo,
    now: Timestamp,
) -> Result<IngestReport, IngestError> {
    let descriptor = provider.descriptor();
    let name = descriptor.name.clone();
    if !descriptor.serves(&series.id) {
        return Err(IngestError::ForeignSeries(series.id.clone(), name));
    }
    let lookback = descriptor.lookback();
    limiter.try_acquire(now).map_err(IngestError::RateLimited)?;

    let batch = provider
        .fetch(&series.id, now - lookback.delta(), now)
        .map_err(|e| IngestError::ProviderUnavailable {
            provider: name.clone(),
            reason: e.to_string(),
        })?;
    ingest_batch(store, series, &name, batch, now)
}

/// Normalizes and upserts an already fetched batch.
pub fn ingest_batch(
    store: &mut Store,
    series: &SeriesInfo,
    provider_name: &str,
    batch: RawBatch,
    now: Timestamp,
) -> Result<IngestReport, IngestError> {
    let tz = series
        .timezone()
        .map_err(|_| IngestError::UnknownSeries(series.id.clone()))?;
    store.register_series(&series.id);
    let provenance = Provenance::new(provider_name, batch.endpoint.clone(), batch.pull_time);
    let mut report = IngestReport::default();

    let mut points: Vec<(Timestamp, f64)> = Vec::with_capacity(batch.points.len());
    for p in &batch.points {
        if !p.value.is_finite() {
            warn!(series = %series.id, value = p.value, "skipping non-finite value");
            report.malformed += 1;
            continue;
        }
        match p.event_time.to_utc(tz) {
            Ok(t) => points.push((t, p.value)),
            Err(e) => {
                warn!(series = %series.id, error = %e, "skipping record with bad timestamp");
                report.malformed += 1;
            }
        }
    }
    // Within a batch the last occurrence of an event time wins.
    let deduped: BTreeMap<Timestamp, f64> = points.into_iter().collect();
    for (t, v) in deduped {
        let outcome = store.upsert_at(&series.id, t, v, provenance.clone(), now)?;
        report.record(outcome);
    }
    debug!(series = %series.id, ?report, "ingested batch");
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreshnessReport {
    pub series: SeriesId,
    pub latest_event_time: Option<Timestamp>,
    pub stale: bool,
}

/// `stale` iff nothing is visible or the newest point is more than
/// `threshold_steps` steps older than `now`.
pub fn check_freshness(
    store: &Store,
    series: &SeriesId,
    frequency: Frequency,
    threshold_steps: u32,
    now: Timestamp,
) -> Result<FreshnessReport, StoreError> {
    let latest = store.latest_event_time(series, now)?;
    let threshold = frequency.step().times(i64::from(threshold_steps));
    let stale = latest.is_none_or(|t| now - t > threshold);
    Ok(FreshnessReport {
        series: series.clone(),
        latest_event_time: latest,
        stale,
    })
}

struct ProviderSlot {
    provider: Box<dyn Provider>,
    limiter: RateLimiter,
    schedule: PullSchedule,
}

#[derive(Debug, Clone)]
struct CatalogEntry {
    info: SeriesInfo,
    staleness_steps: u32,
}

/// Owns the registered providers, their limiters and pull schedules.
#[derive(Default)]
pub struct IngestionService {
    slots: Vec<ProviderSlot>,
    catalog: BTreeMap<SeriesId, CatalogEntry>,
    jitter_seed: u64,
}

impl IngestionService {
    pub fn new(jitter_seed: u64) -> Self {
        Self {
            jitter_seed,
            ..Self::default()
        }
    }

    pub fn add_provider(&mut self, provider: Box<dyn Provider>) -> Result<(), String> {
        let descriptor = provider.descriptor().clone();
        descriptor.validate()?;
        for s in &descriptor.series_catalog {
            if self.catalog.contains_key(&s.id) {
                return Err(format!("series {} registered twice", s.id));
            }
            s.timezone().map_err(|e| e.to_string())?;
        }
        for s in &descriptor.series_catalog {
            self.catalog.insert(
                s.id.clone(),
                CatalogEntry {
                    info: s.clone(),
                    staleness_steps: DEFAULT_STALENESS_STEPS,
                },
            );
        }
        let seed = self.jitter_seed ^ (self.slots.len() as u64).wrapping_mul(0x9e37_79b9);
        self.slots.push(ProviderSlot {
            limiter: RateLimiter::new(descriptor.rate_limit),
            schedule: PullSchedule::new(descriptor.pull_interval, seed),
            provider,
        });
        Ok(())
    }

    pub fn set_staleness_steps(&mut self, series: &SeriesId, steps: u32) {
        if let Some(e) = self.catalog.get_mut(series) {
            e.staleness_steps = steps;
        }
    }

    pub fn series_info(&self, series: &SeriesId) -> Option<&SeriesInfo> {
        self.catalog.get(series).map(|e| &e.info)
    }

    pub fn catalog(&self) -> impl Iterator<Item = &SeriesInfo> {
        self.catalog.values().map(|e| &e.info)
    }

    pub fn register_catalog(&self, store: &mut Store) {
        for id in self.catalog.keys() {
            store.register_series(id);
        }
    }

    pub fn check_freshness(&self, store: &Store, series: &SeriesId, now: Timestamp) -> Result<FreshnessReport, IngestError> {
        let entry = self
            .catalog
            .get(series)
            .ok_or_else(|| IngestError::UnknownSeries(series.clone()))?;
        check_freshness(store, series, entry.info.native_frequency, entry.staleness_steps, now)
            .map_err(|e| match e {
                StoreError::UnknownSeries(s) => IngestError::UnknownSeries(s),
                other => IngestError::Store(other),
            })
    }

    /// Fresh catalog series whose domain and native frequency match.
    pub fn fresh_series(&self, store: &Store, domain: &str, frequency: Frequency, now: Timestamp) -> Vec<SeriesId> {
        self.catalog
            .values()
            .filter(|e| e.info.domain == domain && e.info.native_frequency == frequency)
            .filter(|e| {
                self.check_freshness(store, &e.info.id, now)
                    .map(|r| !r.stale)
                    .unwrap_or(false)
            })
            .map(|e| e.info.id.clone())
            .collect()
    }

    /// Pulls every series of one provider immediately, ignoring its schedule.
    pub fn pull_provider(&mut self, index: usize, store: &mut Store, now: Timestamp) -> Result<IngestReport, IngestError> {
        let slot = &mut self.slots[index];
        let catalog = slot.provider.descriptor().series_catalog.clone();
        let mut total = IngestReport::default();
        let mut result = Ok(());
        for info in &catalog {
            match pull_and_ingest(slot.provider.as_mut(), &mut slot.limiter, store, info, now) {
                Ok(r) => total.merge(r),
                Err(IngestError::RateLimited(wait)) => {
                    debug!(series = %info.id, ?wait, "rate limited; series deferred to next pull");
                }
                Err(e @ IngestError::ProviderUnavailable { .. }) => {
                    result = Err(e);
                    break;
                }
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
        }
        store.commit()?;
        result.map(|_| total)
    }

    /// Runs every provider whose next pull is due at `now`. Failures are
    /// isolated per provider and rescheduled with capped backoff.
    pub fn tick(&mut self, store: &mut Store, now: Timestamp) -> Vec<PollRecord> {
        let mut polls = Vec::new();
        for i in 0..self.slots.len() {
            if !self.slots[i].schedule.is_due(now) {
                continue;
            }
            let result = self.pull_provider(i, store, now);
            let slot = &mut self.slots[i];
            let name = slot.provider.descriptor().name.clone();
            match result {
                Ok(report) => {
                    slot.schedule.on_success(now);
                    polls.push(PollRecord {
                        provider: name,
                        at: now,
                        report: Some(report),
                        error: None,
                    });
                }
                Err(e) => {
                    warn!(provider = %name, error = %e, "pull failed");
                    slot.schedule.on_failure(now);
                    polls.push(PollRecord {
                        provider: name,
                        at: now,
                        report: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
        polls
    }

    pub fn provider_names(&self) -> Vec<String> {
        self.slots.iter().map(|s| s.provider.descriptor().name.clone()).collect()
    }

    /// Backfills `(now - span, now]` for every provider in one request per
    /// series, bypassing rate limits. Used to seed history at startup.
    pub fn backfill(&mut self, store: &mut Store, span: TimeDelta, now: Timestamp) -> Result<IngestReport, IngestError> {
        let mut total = IngestReport::default();
        for slot in &mut self.slots {
            let descriptor = slot.provider.descriptor().clone();
            for info in &descriptor.series_catalog {
                let batch = slot
                    .provider
                    .fetch(&info.id, now - span, now)
                    .map_err(|e| IngestError::ProviderUnavailable {
                        provider: descriptor.name.clone(),
                        reason: e.to_string(),
                    })?;
                total.merge(ingest_batch(store, info, &descriptor.name, batch, now)?);
            }
        }
        store.commit()?;
        Ok(total)
    }
}
