//! Challenge planning and lifecycle.
//!
//! A challenge moves `announced → registration → active → closed`. The stage
//! is never stored as authoritative state: it is recomputed from the [`ChallengeSpec`],
//! the store contents and the current time, so replays converge.

mod alias;
mod schedule;

use std::collections::{BTreeMap, BTreeSet};

use chrono::TimeDelta;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use alias::{keyed_token, make_alias, sample_random, stable_hash, SeriesAlias};
pub use schedule::{
    challenge_id, day_start, plan_bucket, plan_challenges, BucketSchedule, PlannedChallenge, ScheduleConfig,
    SelectionConfig, MIN_COMFORTABLE_STEP_SECS,
};

use crate::domain::{horizon_grid, BucketKey, DomainError, SeriesId, Timestamp};
use crate::store::Store;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrchestratorError {
    #[error("bucket {bucket} has {available} fresh series, {needed} required")]
    NoEligibleSeries {
        bucket: BucketKey,
        needed: usize,
        available: usize,
    },
    #[error("need {needed} eligible series, have {available}")]
    InsufficientEligible { needed: usize, available: usize },
    #[error("unknown challenge {0}")]
    UnknownChallenge(String),
    #[error("challenge {0} is still in registration")]
    StillInRegistration(String),
    #[error("invalid challenge configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Selection {
    Fixed { series: Vec<SeriesId> },
    Random { k: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeSpec {
    pub challenge_id: String,
    pub bucket: BucketKey,
    /// Pre-registration cut-off.
    pub t_p: Timestamp,
    pub context_length: usize,
    pub horizon_steps: usize,
    pub selection: Selection,
    pub announce_at: Timestamp,
    pub registration_open_at: Timestamp,
    pub grace: crate::domain::IsoDuration,
}

impl ChallengeSpec {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::InvalidConfig(format!("{}: {m}", self.challenge_id)));
        if !(self.announce_at <= self.registration_open_at && self.registration_open_at < self.t_p) {
            return bad("require announce_at <= registration_open_at < t_p");
        }
        if self.horizon_steps != self.bucket.horizon_steps()? {
            return bad("horizon steps disagree with bucket horizon");
        }
        if self.context_length == 0 {
            return bad("context length must be >= 1");
        }
        if let Selection::Random { k: 0, .. } = self.selection {
            return bad("k must be >= 1");
        }
        Ok(())
    }

    pub fn step(&self) -> TimeDelta {
        self.bucket.frequency.delta()
    }

    pub fn horizon_grid(&self) -> Vec<Timestamp> {
        horizon_grid(self.t_p, self.bucket.frequency, self.horizon_steps)
    }

    pub fn last_horizon_point(&self) -> Timestamp {
        self.t_p + self.bucket.frequency.step().times(self.horizon_steps as i64)
    }

    /// First event time of the served context window `(t_p - c·step, t_p]`.
    pub fn context_start(&self) -> Timestamp {
        self.t_p - self.bucket.frequency.step().times(self.context_length as i64 - 1)
    }

    pub fn close_deadline(&self) -> Timestamp {
        self.last_horizon_point() + self.grace.delta()
    }

    pub fn is_random(&self) -> bool {
        matches!(self.selection, Selection::Random { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Announced,
    Registration,
    Active,
    Closed,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Announced => "announced",
            Stage::Registration => "registration",
            Stage::Active => "active",
            Stage::Closed => "closed",
        })
    }
}

impl std::str::FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "announced" => Ok(Stage::Announced),
            "registration" => Ok(Stage::Registration),
            "active" => Ok(Stage::Active),
            "closed" => Ok(Stage::Closed),
            other => Err(format!("unknown stage `{other}`")),
        }
    }
}

/// Stage implied by `now`, plus the closure instant once closed.
///
/// `completion` is the transaction time at which the last horizon actual
/// first became visible, if all of them have.
pub fn stage_at(spec: &ChallengeSpec, now: Timestamp, completion: Option<Timestamp>) -> (Stage, Option<Timestamp>) {
    if now < spec.registration_open_at {
        return (Stage::Announced, None);
    }
    if now <= spec.t_p {
        return (Stage::Registration, None);
    }
    let deadline = spec.close_deadline();
    if let Some(done) = completion.filter(|c| *c <= now && *c <= deadline) {
        return (Stage::Closed, Some(done.max(spec.t_p)));
    }
    if now > deadline {
        return (Stage::Closed, Some(deadline));
    }
    (Stage::Active, None)
}

/// Time at which every horizon actual of every selected series was first known.
pub fn horizon_completion(spec: &ChallengeSpec, series: &[SeriesId], store: &Store) -> Option<Timestamp> {
    let grid = spec.horizon_grid();
    let mut latest = spec.t_p;
    for s in series {
        for t in &grid {
            latest = latest.max(store.first_known(s, *t)?);
        }
    }
    Some(latest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Challenge {
    pub spec: ChallengeSpec,
    pub aliases: Vec<SeriesAlias>,
    pub stage: Stage,
    pub reveal_done: bool,
    pub closed_at: Option<Timestamp>,
    /// model_id → aliases with an accepted submission.
    pub participants: BTreeMap<String, BTreeSet<String>>,
}

impl Challenge {
    pub fn new(planned: PlannedChallenge) -> Self {
        Self {
            spec: planned.spec,
            aliases: planned.aliases,
            stage: Stage::Announced,
            reveal_done: false,
            closed_at: None,
            participants: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.spec.challenge_id
    }

    pub fn alias(&self, alias: &str) -> Option<&SeriesAlias> {
        self.aliases.iter().find(|a| a.alias == alias)
    }

    pub fn series(&self) -> Vec<SeriesId> {
        self.aliases.iter().map(|a| a.true_series.clone()).collect()
    }

    /// Whether true identities may be shown to participants.
    pub fn identities_public(&self) -> bool {
        !self.spec.is_random() || self.reveal_done
    }

    pub fn reveal_mapping(&self) -> Result<Vec<(String, SeriesId)>, OrchestratorError> {
        if self.stage < Stage::Active {
            return Err(OrchestratorError::StillInRegistration(self.id().to_string()));
        }
        Ok(self
            .aliases
            .iter()
            .map(|a| (a.alias.clone(), a.true_series.clone()))
            .collect())
    }
}

/// Stage change observed by [`Orchestrator::advance`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub challenge_id: String,
    pub from: Stage,
    pub to: Stage,
    pub closed_at: Option<Timestamp>,
}

#[derive(Debug, Default)]
pub struct Orchestrator {
    config: ScheduleConfig,
    challenges: BTreeMap<String, Challenge>,
    planned: BTreeSet<(usize, Timestamp)>,
}

impl Orchestrator {
    pub fn new(config: ScheduleConfig) -> Result<Self, OrchestratorError> {
        config.validate()?;
        Ok(Self {
            config,
            ..Self::default()
        })
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn challenges(&self) -> impl Iterator<Item = &Challenge> {
        self.challenges.values()
    }

    pub fn get(&self, id: &str) -> Result<&Challenge, OrchestratorError> {
        self.challenges
            .get(id)
            .ok_or_else(|| OrchestratorError::UnknownChallenge(id.to_string()))
    }

    pub fn get_mut(&mut self, id: &str) -> Result<&mut Challenge, OrchestratorError> {
        self.challenges
            .get_mut(id)
            .ok_or_else(|| OrchestratorError::UnknownChallenge(id.to_string()))
    }

    /// `(bucket index, day start)` pairs that should be planned at `now`:
    /// the current and the next UTC day, bounded by `until` when given.
    pub fn due_plans(&self, now: Timestamp, until: Option<Timestamp>) -> Vec<(usize, Timestamp)> {
        let today = day_start(now);
        let mut out = Vec::new();
        for day in [today, today + TimeDelta::days(1)] {
            if until.is_some_and(|u| day >= u) {
                continue;
            }
            for i in 0..self.config.buckets.len() {
                if !self.planned.contains(&(i, day)) {
                    out.push((i, day));
                }
            }
        }
        out
    }

    pub fn mark_planned(&mut self, bucket_index: usize, day: Timestamp) {
        self.planned.insert((bucket_index, day_start(day)));
    }

    /// Registers a planned challenge. Re-inserting the same id is a no-op.
    pub fn insert(&mut self, planned: PlannedChallenge) -> bool {
        if self.challenges.contains_key(&planned.spec.challenge_id) {
            return false;
        }
        self.challenges
            .insert(planned.spec.challenge_id.clone(), Challenge::new(planned));
        true
    }

    /// Recomputes the stage of `id` at `now`.
    pub fn advance(&mut self, id: &str, store: &Store, now: Timestamp) -> Result<Option<Transition>, OrchestratorError> {
        let ch = self.get_mut(id)?;
        let from = ch.stage;
        if from == Stage::Closed {
            return Ok(None);
        }
        let completion = if now > ch.spec.t_p {
            horizon_completion(&ch.spec, &ch.series(), store)
        } else {
            None
        };
        let (to, closed_at) = stage_at(&ch.spec, now, completion);
        if to <= from {
            return Ok(None);
        }
        ch.stage = to;
        if to >= Stage::Active && !ch.reveal_done {
            ch.reveal_done = true;
            for a in &mut ch.aliases {
                a.revealed = true;
            }
        }
        ch.closed_at = closed_at;
        Ok(Some(Transition {
            challenge_id: id.to_string(),
            from,
            to,
            closed_at,
        }))
    }

    /// Alias mapping; only available once registration has closed.
    pub fn reveal(&self, id: &str) -> Result<Vec<(String, SeriesId)>, OrchestratorError> {
        self.get(id)?.reveal_mapping()
    }

    pub fn record_participation(&mut self, id: &str, model_id: &str, alias: &str) {
        if let Some(ch) = self.challenges.get_mut(id) {
            ch.participants
                .entry(model_id.to_string())
                .or_default()
                .insert(alias.to_string());
        }
    }

    pub fn open_ids(&self) -> Vec<String> {
        self.challenges
            .values()
            .filter(|c| c.stage != Stage::Closed)
            .map(|c| c.spec.challenge_id.clone())
            .collect()
    }
}
