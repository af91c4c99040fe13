//! Per-bucket challenge cadence and the day planner.

use chrono::{DateTime, TimeDelta};
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::alias::{make_alias, sample_random, stable_hash, SeriesAlias};
use super::{ChallengeSpec, OrchestratorError, Selection};
use crate::domain::{BucketKey, Frequency, IsoDuration, SeriesId, Timestamp};

const DAY_SECS: i64 = 86_400;

/// Frequencies below this trigger a feasibility warning: the platform cannot
/// observe participant inference time, so it only warns.
pub const MIN_COMFORTABLE_STEP_SECS: i64 = 15 * 60;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SelectionConfig {
    Random { k: usize, seed: u64 },
    Fixed { series: Vec<SeriesId> },
}

fn default_registration_window() -> IsoDuration {
    IsoDuration::hours(1)
}

fn default_announce_lead() -> IsoDuration {
    IsoDuration::hours(6)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketSchedule {
    pub domain: String,
    pub frequency: Frequency,
    pub horizon: IsoDuration,
    pub cadence_per_day: u32,
    /// Offset of the first cut-off after UTC midnight.
    #[serde(default = "zero")]
    pub phase_offset: IsoDuration,
    /// Context length `c` in steps.
    pub context_length: usize,
    #[serde(default = "default_registration_window")]
    pub registration_window: IsoDuration,
    /// Time between announcement and the opening of registration.
    #[serde(default = "default_announce_lead")]
    pub announce_lead: IsoDuration,
    /// Closure grace after the last horizon point; defaults to 6 steps.
    #[serde(default)]
    pub grace: Option<IsoDuration>,
    pub selection: SelectionConfig,
}

fn zero() -> IsoDuration {
    IsoDuration::seconds(0)
}

impl BucketSchedule {
    pub fn bucket(&self) -> BucketKey {
        BucketKey::new(self.domain.clone(), self.frequency, self.horizon)
    }

    pub fn grace(&self) -> IsoDuration {
        self.grace
            .unwrap_or_else(|| IsoDuration::from_delta(self.frequency.step().times(6)))
    }

    pub fn spacing(&self) -> TimeDelta {
        TimeDelta::seconds(DAY_SECS / i64::from(self.cadence_per_day.max(1)))
    }

    /// Hard errors, plus soft warnings returned on success.
    pub fn validate(&self) -> Result<Vec<String>, OrchestratorError> {
        let bad = |m: String| Err(OrchestratorError::InvalidConfig(m));
        let bucket = self.bucket();
        bucket.horizon_steps()?;
        if self.cadence_per_day == 0 || DAY_SECS % i64::from(self.cadence_per_day) != 0 {
            return bad(format!("{bucket}: cadence must be a positive divisor of one day in seconds"));
        }
        if self.context_length == 0 {
            return bad(format!("{bucket}: context length must be >= 1"));
        }
        if !self.registration_window.is_positive() {
            return bad(format!("{bucket}: registration window must be positive"));
        }
        if self.announce_lead.num_seconds() < 0 || self.phase_offset.num_seconds() < 0 {
            return bad(format!("{bucket}: offsets must be non-negative"));
        }
        match &self.selection {
            SelectionConfig::Random { k, .. } if *k == 0 => return bad(format!("{bucket}: k must be >= 1")),
            SelectionConfig::Fixed { series } if series.is_empty() => {
                return bad(format!("{bucket}: fixed selection needs at least one series"))
            }
            _ => {}
        }
        let mut warnings = Vec::new();
        if self.frequency.step().num_seconds() < MIN_COMFORTABLE_STEP_SECS {
            let msg = format!(
                "{bucket}: step {} is very short; models whose inference exceeds one step cannot take part",
                self.frequency
            );
            warn!("{msg}");
            warnings.push(msg);
        }
        Ok(warnings)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    #[serde(default, rename = "bucket")]
    pub buckets: Vec<BucketSchedule>,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<Vec<String>, OrchestratorError> {
        let mut warnings = Vec::new();
        for b in &self.buckets {
            warnings.extend(b.validate()?);
        }
        Ok(warnings)
    }
}

/// A planned challenge together with its series aliases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedChallenge {
    pub spec: ChallengeSpec,
    pub aliases: Vec<SeriesAlias>,
}

pub fn day_start(t: Timestamp) -> Timestamp {
    let secs = t.timestamp().div_euclid(DAY_SECS) * DAY_SECS;
    DateTime::from_timestamp(secs, 0).expect("in range")
}

pub fn challenge_id(bucket: &BucketKey, t_p: Timestamp) -> String {
    format!(
        "{}-{}-{}-{}",
        bucket.domain,
        bucket.frequency.step().to_string().to_ascii_lowercase(),
        bucket.horizon.to_string().to_ascii_lowercase(),
        t_p.format("%Y%m%dt%H%Mz")
    )
}

/// Plans one bucket's challenges for the UTC day starting at `day`.
/// `eligible` lists the fresh series of the bucket at planning time.
pub fn plan_bucket(
    schedule: &BucketSchedule,
    day: Timestamp,
    eligible: &[SeriesId],
    secret: &[u8],
) -> Result<Vec<PlannedChallenge>, OrchestratorError> {
    schedule.validate()?;
    let bucket = schedule.bucket();
    let h = bucket.horizon_steps()?;
    let day = day_start(day);
    let spacing = schedule.spacing();
    if let SelectionConfig::Random { k, .. } = &schedule.selection {
        let mut pool = eligible.to_vec();
        pool.sort();
        pool.dedup();
        if pool.len() < *k {
            return Err(OrchestratorError::NoEligibleSeries {
                bucket: bucket.clone(),
                needed: *k,
                available: pool.len(),
            });
        }
    }
    let mut out = Vec::with_capacity(schedule.cadence_per_day as usize);
    for i in 0..schedule.cadence_per_day {
        let t_p = day + schedule.phase_offset.delta() + spacing * i as i32;
        let registration_open_at = t_p - schedule.registration_window.delta();
        let announce_at = registration_open_at - schedule.announce_lead.delta();
        let id = challenge_id(&bucket, t_p);
        let (selection, aliases) = match &schedule.selection {
            SelectionConfig::Random { k, seed } => {
                let draw_seed = *seed ^ stable_hash(&id);
                let aliases = sample_random(*k, draw_seed, eligible, &id, secret)?;
                (Selection::Random { k: *k, seed: draw_seed }, aliases)
            }
            SelectionConfig::Fixed { series } => {
                let aliases = series
                    .iter()
                    .map(|s| SeriesAlias {
                        challenge_id: id.clone(),
                        alias: make_alias(secret, &id, s),
                        true_series: s.clone(),
                        revealed: true,
                    })
                    .collect();
                (Selection::Fixed { series: series.clone() }, aliases)
            }
        };
        let spec = ChallengeSpec {
            challenge_id: id,
            bucket: bucket.clone(),
            t_p,
            context_length: schedule.context_length,
            horizon_steps: h,
            selection,
            announce_at,
            registration_open_at,
            grace: schedule.grace(),
        };
        spec.validate()?;
        out.push(PlannedChallenge { spec, aliases });
    }
    Ok(out)
}

/// Plans every bucket for the UTC day containing `now`.
pub fn plan_challenges(
    config: &ScheduleConfig,
    now: Timestamp,
    eligible: impl Fn(&BucketKey) -> Vec<SeriesId>,
    secret: &[u8],
) -> Result<Vec<PlannedChallenge>, OrchestratorError> {
    let mut out = Vec::new();
    for b in &config.buckets {
        out.extend(plan_bucket(b, day_start(now), &eligible(&b.bucket()), secret)?);
    }
    Ok(out)
}
