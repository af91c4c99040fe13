//! Shared vocabulary: UTC timestamps, ISO-8601 durations, series identity,
//! buckets and scopes, plus the horizon grid arithmetic every module uses.
//!
//! All arithmetic happens in UTC. A series' original time zone is carried
//! as metadata and only used when rendering or when normalizing raw feeds.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Absolute instant, always UTC. Serialized as RFC 3339 with a `Z` suffix.
pub type Timestamp = DateTime<Utc>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("horizon {horizon} is not an integer multiple of step {step}")]
    NonDivisible { horizon: IsoDuration, step: IsoDuration },
    #[error("invalid ISO-8601 duration `{0}`")]
    InvalidDuration(String),
    #[error("duration must be positive, got {0}")]
    NonPositive(IsoDuration),
    #[error("unknown time zone `{0}`")]
    UnknownTimeZone(String),
}

/// A fixed-length duration with ISO-8601 text form (`PT15M`, `PT1H`, `P7D`).
///
/// Calendar units (months, years) are rejected: every duration here is an
/// exact number of seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IsoDuration(TimeDelta);

impl IsoDuration {
    pub fn from_delta(delta: TimeDelta) -> Self {
        Self(delta)
    }

    pub fn seconds(secs: i64) -> Self {
        Self(TimeDelta::seconds(secs))
    }

    pub fn minutes(m: i64) -> Self {
        Self(TimeDelta::minutes(m))
    }

    pub fn hours(h: i64) -> Self {
        Self(TimeDelta::hours(h))
    }

    pub fn days(d: i64) -> Self {
        Self(TimeDelta::days(d))
    }

    pub fn delta(self) -> TimeDelta {
        self.0
    }

    pub fn num_seconds(self) -> i64 {
        self.0.num_seconds()
    }

    pub fn is_positive(self) -> bool {
        self.0 > TimeDelta::zero()
    }

    /// `self * n`, panicking on overflow (durations here are small).
    pub fn times(self, n: i64) -> TimeDelta {
        self.0 * i32::try_from(n).expect("step multiplier fits in i32")
    }
}

impl fmt::Display for IsoDuration {
    // Canonical form has no day designator: `PT24H`, never `P1D`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let total = self.0.num_seconds();
        if total == 0 {
            return f.write_str("PT0S");
        }
        let (sign, total) = if total < 0 { ("-", -total) } else { ("", total) };
        let (h, m, s) = (total / 3600, (total % 3600) / 60, total % 60);
        write!(f, "{sign}PT")?;
        if h > 0 {
            write!(f, "{h}H")?;
        }
        if m > 0 {
            write!(f, "{m}M")?;
        }
        if s > 0 {
            write!(f, "{s}S")?;
        }
        Ok(())
    }
}

impl FromStr for IsoDuration {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || DomainError::InvalidDuration(s.to_string());
        let (negative, rest) = match s.strip_prefix('-') {
            Some(r) => (true, r),
            None => (false, s),
        };
        let body = rest.strip_prefix('P').ok_or_else(err)?;
        let (date_part, time_part) = match body.split_once('T') {
            Some((d, t)) if !t.is_empty() => (d, Some(t)),
            Some(_) => return Err(err()),
            None => (body, None),
        };
        if date_part.is_empty() && time_part.is_none() {
            return Err(err());
        }
        let mut secs: i64 = 0;
        let mut consume = |part: &str, units: &[(char, i64)]| -> Result<(), DomainError> {
            let mut digits = String::new();
            let mut unit_idx = 0;
            for ch in part.chars() {
                if ch.is_ascii_digit() {
                    digits.push(ch);
                    continue;
                }
                let pos = units[unit_idx..]
                    .iter()
                    .position(|(u, _)| *u == ch)
                    .ok_or_else(err)?;
                if digits.is_empty() {
                    return Err(err());
                }
                let n: i64 = digits.parse().map_err(|_| err())?;
                secs = n
                    .checked_mul(units[unit_idx + pos].1)
                    .and_then(|v| secs.checked_add(v))
                    .ok_or_else(err)?;
                unit_idx += pos + 1;
                digits.clear();
            }
            if digits.is_empty() {
                Ok(())
            } else {
                Err(err())
            }
        };
        consume(date_part, &[('W', 7 * 86_400), ('D', 86_400)])?;
        if let Some(t) = time_part {
            consume(t, &[('H', 3600), ('M', 60), ('S', 1)])?;
        }
        Ok(Self(TimeDelta::seconds(if negative { -secs } else { secs })))
    }
}

impl Serialize for IsoDuration {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IsoDuration {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Sampling step of a series or challenge. Always strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Frequency(IsoDuration);

impl Frequency {
    pub fn new(step: IsoDuration) -> Result<Self, DomainError> {
        if step.is_positive() {
            Ok(Self(step))
        } else {
            Err(DomainError::NonPositive(step))
        }
    }

    pub fn minutes(m: i64) -> Self {
        Self::new(IsoDuration::minutes(m)).expect("positive step")
    }

    pub fn hours(h: i64) -> Self {
        Self::new(IsoDuration::hours(h)).expect("positive step")
    }

    pub fn days(d: i64) -> Self {
        Self::new(IsoDuration::days(d)).expect("positive step")
    }

    pub fn step(self) -> IsoDuration {
        self.0
    }

    pub fn delta(self) -> TimeDelta {
        self.0.delta()
    }

    /// Whether `t` lies on the grid of this frequency anchored at the Unix epoch.
    pub fn is_aligned(self, t: Timestamp) -> bool {
        t.timestamp().rem_euclid(self.0.num_seconds()) == 0 && t.timestamp_subsec_nanos() == 0
    }

    /// Largest grid point `<= t`.
    pub fn floor(self, t: Timestamp) -> Timestamp {
        let step = self.0.num_seconds();
        let secs = t.timestamp().div_euclid(step) * step;
        DateTime::from_timestamp(secs, 0).expect("in range")
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for Frequency {
    type Err = DomainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s.parse()?)
    }
}

impl<'de> Deserialize<'de> for Frequency {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let step = IsoDuration::deserialize(deserializer)?;
        Self::new(step).map_err(serde::de::Error::custom)
    }
}

/// Identity of a series: `(provider, external_id)` is globally unique.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesId {
    pub provider: String,
    pub external_id: String,
}

impl SeriesId {
    pub fn new(provider: impl Into<String>, external_id: impl Into<String>) -> Self {
        Self {
            provider: provider.into(),
            external_id: external_id.into(),
        }
    }
}

impl fmt::Display for SeriesId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.provider, self.external_id)
    }
}

/// Catalog entry describing a series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesInfo {
    pub id: SeriesId,
    pub domain: String,
    pub subdomain: String,
    pub native_frequency: Frequency,
    pub display_name: String,
    /// IANA zone name recorded at ingestion. Metadata only.
    pub original_timezone: String,
}

impl SeriesInfo {
    pub fn timezone(&self) -> Result<chrono_tz::Tz, DomainError> {
        self.original_timezone
            .parse()
            .map_err(|_| DomainError::UnknownTimeZone(self.original_timezone.clone()))
    }
}

/// Sampling bucket for random challenges.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BucketKey {
    pub domain: String,
    pub frequency: Frequency,
    pub horizon: IsoDuration,
}

impl BucketKey {
    pub fn new(domain: impl Into<String>, frequency: Frequency, horizon: IsoDuration) -> Self {
        Self {
            domain: domain.into(),
            frequency,
            horizon,
        }
    }

    pub fn horizon_steps(&self) -> Result<usize, DomainError> {
        horizon_steps(self.horizon, self.frequency)
    }
}

impl fmt::Display for BucketKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.domain, self.frequency, self.horizon)
    }
}

/// Leaderboard filter. Unset fields match anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scope {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<Frequency>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<IsoDuration>,
}

impl Scope {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn matches(&self, bucket: &BucketKey) -> bool {
        self.domain.as_ref().is_none_or(|d| *d == bucket.domain)
            && self.frequency.is_none_or(|f| f == bucket.frequency)
            && self.horizon.is_none_or(|h| h == bucket.horizon)
    }
}

impl From<&BucketKey> for Scope {
    fn from(bucket: &BucketKey) -> Self {
        Self {
            domain: Some(bucket.domain.clone()),
            frequency: Some(bucket.frequency),
            horizon: Some(bucket.horizon),
        }
    }
}

/// Number of forecast steps `h` covering `horizon` at `frequency`.
pub fn horizon_steps(horizon: IsoDuration, frequency: Frequency) -> Result<usize, DomainError> {
    let h = horizon.num_seconds();
    let step = frequency.step().num_seconds();
    if h <= 0 {
        return Err(DomainError::NonPositive(horizon));
    }
    if h % step != 0 {
        return Err(DomainError::NonDivisible {
            horizon,
            step: frequency.step(),
        });
    }
    Ok((h / step) as usize)
}

/// `[t_p + 1·step, …, t_p + h·step]`.
pub fn horizon_grid(t_p: Timestamp, frequency: Frequency, h: usize) -> Vec<Timestamp> {
    (1..=h as i64).map(|i| t_p + frequency.step().times(i)).collect()
}

/// The `c` grid points ending at and including `t_p`, oldest first.
pub fn context_grid(t_p: Timestamp, frequency: Frequency, c: usize) -> Vec<Timestamp> {
    (0..c as i64)
        .rev()
        .map(|i| t_p - frequency.step().times(i))
        .collect()
}

/// Places `(event_time, value)` points onto `grid`, leaving `None` at gaps.
/// Points that fall off the grid are ignored.
pub fn align_to_grid<T: Copy>(grid: &[Timestamp], points: &[(Timestamp, T)]) -> Vec<Option<T>> {
    let mut out = vec![None; grid.len()];
    for (t, v) in points {
        if let Ok(i) = grid.binary_search(t) {
            out[i] = Some(*v);
        }
    }
    out
}
