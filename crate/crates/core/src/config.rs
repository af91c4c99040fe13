//! TOML configuration shared by the server and the scenario harness.

use std::path::{Path, PathBuf};

use chrono::TimeDelta;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::BaselineConfig;
use crate::domain::{Frequency, IsoDuration, SeriesId, SeriesInfo, Timestamp};
use crate::ingestion::{FixtureProvider, IngestionService, Provider, ProviderDescriptor, ProviderKind, SyntheticProvider};
use crate::orchestrator::{stable_hash, BucketSchedule};
use crate::platform::PlatformConfig;
use crate::ratelimit::RateLimit;
use crate::sim::synthetic::SyntheticSeriesSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("provider {provider}: {message}")]
    Provider { provider: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

pub fn load_toml<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

fn utc() -> String {
    "UTC".into()
}

fn hourly() -> IsoDuration {
    IsoDuration::hours(1)
}

fn generous() -> RateLimit {
    RateLimit::per_minute(600)
}

fn zero() -> IsoDuration {
    IsoDuration::seconds(0)
}

/// A family of synthetic series that differ only in level, phase and noise draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesGroup {
    pub prefix: String,
    pub count: usize,
    pub domain: String,
    pub subdomain: String,
    pub frequency: Frequency,
    #[serde(default = "utc")]
    pub timezone: String,
    pub base: f64,
    pub amplitude: f64,
    /// Seasonal period in steps.
    pub period: usize,
    #[serde(default)]
    pub trend: f64,
    #[serde(default)]
    pub noise_std: f64,
    /// Relative spread of `base` and `amplitude` across the group.
    #[serde(default)]
    pub spread: f64,
    #[serde(default = "zero")]
    pub emission_delay: IsoDuration,
    #[serde(default)]
    pub correction_rate: f64,
    #[serde(default)]
    pub correction_offset: f64,
    #[serde(default = "zero")]
    pub correction_delay: IsoDuration,
}

impl SeriesGroup {
    /// Expands the group into per-series generators, deterministically in `seed`.
    pub fn expand(&self, provider: &str, epoch: Timestamp, seed: u64) -> Vec<SyntheticSeriesSpec> {
        (0..self.count)
            .map(|i| {
                let external_id = format!("{}-{:03}", self.prefix, i);
                let h = stable_hash(&format!("{provider}/{external_id}"));
                let u = (h >> 11) as f64 / (1u64 << 53) as f64;
                let factor = 1.0 + self.spread * (u - 0.5);
                SyntheticSeriesSpec {
                    series: SeriesInfo {
                        id: SeriesId::new(provider, &external_id),
                        domain: self.domain.clone(),
                        subdomain: self.subdomain.clone(),
                        native_frequency: self.frequency,
                        display_name: format!("{} {}", self.subdomain, external_id),
                        original_timezone: self.timezone.clone(),
                    },
                    epoch,
                    base: self.base * factor,
                    trend: self.trend,
                    amplitude: self.amplitude * factor,
                    period: self.period,
                    phase: (h % self.period.max(1) as u64) as usize,
                    noise_std: self.noise_std,
                    seed: seed ^ h,
                    emission_delay: self.emission_delay,
                    correction_rate: self.correction_rate,
                    correction_offset: self.correction_offset,
                    correction_delay: self.correction_delay,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSource {
    /// JSON-lines file of `{external_id, event_time, value}` records.
    pub path: PathBuf,
    pub series: Vec<SeriesInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub name: String,
    #[serde(default = "hourly")]
    pub pull_interval: IsoDuration,
    #[serde(default = "generous")]
    pub rate_limit: RateLimit,
    #[serde(default)]
    pub lookback: Option<IsoDuration>,
    #[serde(default)]
    pub series_group: Vec<SeriesGroup>,
    #[serde(default)]
    pub fixture: Option<FixtureSource>,
}

impl ProviderConfig {
    pub fn build(&self, epoch: Timestamp, seed: u64, base_dir: &Path) -> Result<Box<dyn Provider>, ConfigError> {
        let err = |message: String| ConfigError::Provider {
            provider: self.name.clone(),
            message,
        };
        match (&self.fixture, self.series_group.is_empty()) {
            (Some(fixture), true) => {
                let descriptor = ProviderDescriptor {
                    name: self.name.clone(),
                    kind: ProviderKind::HttpStub,
                    series_catalog: fixture.series.clone(),
                    rate_limit: self.rate_limit,
                    pull_interval: self.pull_interval,
                    lookback: self.lookback,
                };
                let path = base_dir.join(&fixture.path);
                FixtureProvider::open(descriptor, &path)
                    .map(|p| Box::new(p) as Box<dyn Provider>)
                    .map_err(|e| err(format!("{}: {e}", path.display())))
            }
            (None, false) => {
                let specs = self
                    .series_group
                    .iter()
                    .flat_map(|g| g.expand(&self.name, epoch, seed))
                    .collect();
                SyntheticProvider::new(&self.name, specs, self.rate_limit, self.pull_interval, self.lookback)
                    .map(|p| Box::new(p) as Box<dyn Provider>)
                    .map_err(err)
            }
            _ => Err(err("exactly one of `series_group` or `fixture` is required".into())),
        }
    }
}

pub fn build_ingestion(
    providers: &[ProviderConfig],
    epoch: Timestamp,
    seed: u64,
    base_dir: &Path,
) -> Result<IngestionService, ConfigError> {
    let mut service = IngestionService::new(seed);
    for p in providers {
        service
            .add_provider(p.build(epoch, seed, base_dir)?)
            .map_err(ConfigError::Invalid)?;
    }
    Ok(service)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ClockConfig {
    #[default]
    Realtime,
    Accelerated {
        factor: f64,
        #[serde(default)]
        start: Option<Timestamp>,
    },
}

fn default_tick() -> IsoDuration {
    IsoDuration::minutes(1)
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_data_dir() -> PathBuf {
    "arena-data".into()
}

/// Configuration of a long-running server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default)]
    pub clock: ClockConfig,
    /// Wall-clock interval between platform ticks.
    #[serde(default = "default_tick")]
    pub tick: IsoDuration,
    /// History pulled from every provider at startup.
    #[serde(default)]
    pub backfill: Option<IsoDuration>,
    #[serde(default)]
    pub seed: u64,
    pub platform: PlatformConfig,
    #[serde(default, rename = "provider")]
    pub providers: Vec<ProviderConfig>,
    #[serde(default, rename = "bucket")]
    pub buckets: Vec<BucketSchedule>,
    #[serde(default, rename = "baseline")]
    pub baselines: Vec<BaselineConfig>,
}

impl ServerConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        load_toml(path)
    }

    pub fn backfill_span(&self) -> TimeDelta {
        self.backfill.map(|d| d.delta()).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    #[test]
    fn group_expansion_is_deterministic_and_varied() {
        let g = SeriesGroup {
            prefix: "load".into(),
            count: 5,
            domain: "energy".into(),
            subdomain: "load".into(),
            frequency: Frequency::hours(1),
            timezone: "Europe/Berlin".into(),
            base: 100.0,
            amplitude: 10.0,
            period: 168,
            trend: 0.0,
            noise_std: 1.0,
            spread: 0.5,
            emission_delay: zero(),
            correction_rate: 0.0,
            correction_offset: 0.0,
            correction_delay: zero(),
        };
        let epoch = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
        let a = g.expand("p", epoch, 7);
        assert_eq!(a, g.expand("p", epoch, 7));
        assert_eq!(a[3].series.id, SeriesId::new("p", "load-003"));
        assert!(a.iter().all(|s| (75.0..=125.0).contains(&s.base) && s.phase < 168));
        let seeds: std::collections::BTreeSet<_> = a.iter().map(|s| s.seed).collect();
        assert_eq!(seeds.len(), 5);
    }

    #[test]
    fn server_config_parses_with_defaults() {
        let text = r#"
            [platform]
            secret = "s"
            operator_key = "op"

            [[provider]]
            name = "grid"
            [[provider.series_group]]
            prefix = "load"
            count = 3
            domain = "energy"
            subdomain = "load"
            frequency = "PT1H"
            base = 10.0
            amplitude = 1.0
            period = 24

            [[bucket]]
            domain = "energy"
            frequency = "PT1H"
            horizon = "PT24H"
            cadence_per_day = 4
            context_length = 168
            selection = { mode = "random", k = 2, seed = 1 }

            [[baseline]]
            name = "naive"
            model = { kind = "naive" }
        "#;
        let cfg: ServerConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.listen, "127.0.0.1:8080");
        assert_eq!(cfg.clock, ClockConfig::Realtime);
        assert_eq!(cfg.platform.api_rate_limit, RateLimit::per_minute(60));
        assert_eq!(cfg.providers[0].pull_interval, IsoDuration::hours(1));
        assert_eq!(cfg.buckets[0].registration_window, IsoDuration::hours(1));
        let epoch = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
        let service = build_ingestion(&cfg.providers, epoch, 0, Path::new(".")).unwrap();
        assert_eq!(service.catalog().count(), 3);
    }
}
