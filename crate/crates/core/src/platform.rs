//! Composition of store, ingestion, orchestrator, evaluator and journal.
//!
//! One tick runs the phases in a fixed order: ingestion, orchestration,
//! (participants act between ticks), evaluation. All mutation of platform
//! state outside the observation store goes through [`Platform::record`],
//! which appends to the journal before applying the event, so reopening a
//! data directory replays to the same state.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::clock::Clock;
use crate::domain::{IsoDuration, Scope, Timestamp};
use crate::evaluation::{ChallengeScore, EvaluationConfig, EvaluationError, Evaluator};
use crate::gateway::{ForecastSubmission, ModelCard};
use crate::ingestion::{IngestError, IngestReport, IngestionService, PollRecord};
use crate::journal::{Journal, JournalEntry, JournalError, PlatformEvent};
use crate::leaderboard::{compute_leaderboard, ClosedChallenge, LeaderboardEntry, Window};
use crate::orchestrator::{plan_bucket, Challenge, Orchestrator, OrchestratorError, ScheduleConfig, Stage};
use crate::ratelimit::{RateLimit, RateLimiter};
use crate::store::{Store, StoreError};

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn default_api_rate_limit() -> RateLimit {
    RateLimit::per_minute(60)
}

fn default_cache_ttl() -> IsoDuration {
    IsoDuration::seconds(30)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformConfig {
    /// Keys alias derivation and API key issuance.
    pub secret: String,
    pub operator_key: String,
    #[serde(default = "default_api_rate_limit")]
    pub api_rate_limit: RateLimit,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default = "default_cache_ttl")]
    pub leaderboard_cache: IsoDuration,
    /// No challenges are planned for days starting at or after this instant.
    #[serde(default)]
    pub plan_until: Option<Timestamp>,
}

impl PlatformConfig {
    pub fn new(secret: impl Into<String>, operator_key: impl Into<String>) -> Self {
        Self {
            secret: secret.into(),
            operator_key: operator_key.into(),
            api_rate_limit: default_api_rate_limit(),
            evaluation: EvaluationConfig::default(),
            leaderboard_cache: default_cache_ttl(),
            plan_until: None,
        }
    }
}

/// Summary of one platform tick.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TickReport {
    pub at: Option<Timestamp>,
    pub polls: usize,
    pub poll_failures: usize,
    pub planned: usize,
    pub transitions: usize,
    pub finalized: usize,
}

type CacheKey = (Window, String);

pub struct Platform {
    pub(crate) config: PlatformConfig,
    pub(crate) clock: Arc<dyn Clock>,
    pub(crate) store: Store,
    pub(crate) ingestion: IngestionService,
    pub(crate) orchestrator: Orchestrator,
    pub(crate) evaluator: Evaluator,
    pub(crate) journal: Journal,
    pub(crate) models: BTreeMap<String, ModelCard>,
    /// API key digest → model id.
    pub(crate) keys: HashMap<String, String>,
    pub(crate) limiters: HashMap<String, RateLimiter>,
    /// `(challenge, alias, model)` → latest accepted submission.
    pub(crate) submissions: BTreeMap<(String, String, String), ForecastSubmission>,
    leaderboard_cache: HashMap<CacheKey, (Timestamp, Vec<LeaderboardEntry>)>,
}

impl Platform {
    /// In-memory platform.
    pub fn new(
        config: PlatformConfig,
        schedule: ScheduleConfig,
        ingestion: IngestionService,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, PlatformError> {
        let store = Store::with_clock(clock.clone());
        Self::assemble(config, schedule, ingestion, clock, store, Journal::in_memory())
    }

    /// Durable platform backed by `data_dir`; existing logs are replayed.
    pub fn open(
        data_dir: impl AsRef<Path>,
        config: PlatformConfig,
        schedule: ScheduleConfig,
        ingestion: IngestionService,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, PlatformError> {
        let dir = data_dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let store = Store::open(dir.join("observations.jsonl"), Some(clock.clone()))?;
        let (journal, existing) = Journal::open(dir.join("journal.jsonl"))?;
        let mut platform = Self::assemble(config, schedule, ingestion, clock, store, journal)?;
        let n = existing.len();
        for entry in existing {
            platform.apply(&entry.event)?;
            platform.journal.restore(entry);
        }
        if n > 0 {
            info!(events = n, "replayed journal");
        }
        Ok(platform)
    }

    /// Latest instant recorded in a data directory's logs, if any.
    pub fn last_activity(data_dir: impl AsRef<Path>) -> Result<Option<Timestamp>, PlatformError> {
        let dir = data_dir.as_ref();
        if !dir.exists() {
            return Ok(None);
        }
        let store = Store::open(dir.join("observations.jsonl"), None)?;
        let (_, entries) = Journal::open(dir.join("journal.jsonl"))?;
        let rows = store.rows().iter().flat_map(|r| [Some(r.valid_from), r.valid_to]).flatten();
        Ok(rows.chain(entries.iter().map(|e| e.at)).max())
    }

    fn assemble(
        config: PlatformConfig,
        schedule: ScheduleConfig,
        ingestion: IngestionService,
        clock: Arc<dyn Clock>,
        mut store: Store,
        journal: Journal,
    ) -> Result<Self, PlatformError> {
        for w in schedule.validate()? {
            warn!("{w}");
        }
        ingestion.register_catalog(&mut store);
        Ok(Self {
            evaluator: Evaluator::new(config.evaluation),
            orchestrator: Orchestrator::new(schedule)?,
            config,
            clock,
            store,
            ingestion,
            journal,
            models: BTreeMap::new(),
            keys: HashMap::new(),
            limiters: HashMap::new(),
            submissions: BTreeMap::new(),
            leaderboard_cache: HashMap::new(),
        })
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut Store {
        &mut self.store
    }

    pub fn ingestion(&self) -> &IngestionService {
        &self.ingestion
    }

    pub fn ingestion_mut(&mut self) -> &mut IngestionService {
        &mut self.ingestion
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.orchestrator
    }

    pub fn evaluator(&self) -> &Evaluator {
        &self.evaluator
    }

    pub fn journal(&self) -> &[JournalEntry] {
        self.journal.entries()
    }

    pub fn submissions_for(&self, challenge_id: &str) -> Vec<&ForecastSubmission> {
        self.submissions
            .values()
            .filter(|s| s.challenge_id == challenge_id)
            .collect()
    }

    pub fn all_submissions(&self) -> impl Iterator<Item = &ForecastSubmission> {
        self.submissions.values()
    }

    /// Appends `event` to the journal and applies it.
    pub(crate) fn record(&mut self, at: Timestamp, event: PlatformEvent) -> Result<(), PlatformError> {
        self.journal.append(at, event.clone())?;
        self.apply(&event)
    }

    // Idempotent: live paths may already have mutated state.
    fn apply(&mut self, event: &PlatformEvent) -> Result<(), PlatformError> {
        match event {
            PlatformEvent::ModelRegistered { card, key_digest, .. } => {
                self.keys.insert(key_digest.clone(), card.model_id.clone());
                self.models.insert(card.model_id.clone(), card.clone());
            }
            PlatformEvent::ChallengesPlanned {
                bucket_index,
                day,
                challenges,
            } => {
                self.orchestrator.mark_planned(*bucket_index, *day);
                for c in challenges {
                    self.orchestrator.insert(c.clone());
                }
            }
            PlatformEvent::StageChanged {
                challenge_id,
                to,
                closed_at,
                ..
            } => {
                let ch = self.orchestrator.get_mut(challenge_id)?;
                ch.stage = ch.stage.max(*to);
                if closed_at.is_some() {
                    ch.closed_at = *closed_at;
                }
            }
            PlatformEvent::AliasesRevealed { challenge_id, .. } => {
                let ch = self.orchestrator.get_mut(challenge_id)?;
                ch.reveal_done = true;
                for a in &mut ch.aliases {
                    a.revealed = true;
                }
            }
            PlatformEvent::ContextServed { .. } | PlatformEvent::SubmissionRejected { .. } => {}
            PlatformEvent::SubmissionAccepted { submission, .. } => {
                self.orchestrator.record_participation(
                    &submission.challenge_id,
                    &submission.model_id,
                    &submission.series_alias,
                );
                self.submissions.insert(
                    (
                        submission.challenge_id.clone(),
                        submission.series_alias.clone(),
                        submission.model_id.clone(),
                    ),
                    submission.clone(),
                );
            }
            PlatformEvent::ScoresFinalized { report } => {
                self.evaluator.restore_final(report.clone());
                self.leaderboard_cache.clear();
            }
        }
        Ok(())
    }

    /// Pulls `span` of history from every provider at the current time.
    pub fn backfill(&mut self, span: chrono::TimeDelta) -> Result<IngestReport, IngestError> {
        let now = self.now();
        self.ingestion.backfill(&mut self.store, span, now)
    }

    /// Ingestion phase: polls every provider that is due.
    pub fn ingest(&mut self, now: Timestamp) -> Vec<PollRecord> {
        self.ingestion.tick(&mut self.store, now)
    }

    /// Orchestration phase: plans due days and advances challenge stages.
    pub fn orchestrate(&mut self, now: Timestamp) -> Result<(usize, usize), PlatformError> {
        let mut planned = 0;
        for (index, day) in self.orchestrator.due_plans(now, self.config.plan_until) {
            let schedule = self.orchestrator.config().buckets[index].clone();
            let eligible = self.ingestion.fresh_series(&self.store, &schedule.domain, schedule.frequency, now);
            match plan_bucket(&schedule, day, &eligible, self.config.secret.as_bytes()) {
                Ok(challenges) => {
                    let challenges: Vec<_> = challenges
                        .into_iter()
                        .filter(|c| c.spec.registration_open_at > now)
                        .collect();
                    planned += challenges.len();
                    self.record(
                        now,
                        PlatformEvent::ChallengesPlanned {
                            bucket_index: index,
                            day,
                            challenges,
                        },
                    )?;
                }
                Err(e @ OrchestratorError::NoEligibleSeries { .. }) => debug!("not planning {day}: {e}"),
                Err(e) => return Err(e.into()),
            }
        }
        let mut transitions = 0;
        for id in self.orchestrator.open_ids() {
            let Some(tr) = self.orchestrator.advance(&id, &self.store, now)? else {
                continue;
            };
            transitions += 1;
            debug!(challenge = %id, from = %tr.from, to = %tr.to, "stage change");
            self.record(
                now,
                PlatformEvent::StageChanged {
                    challenge_id: id.clone(),
                    from: tr.from,
                    to: tr.to,
                    closed_at: tr.closed_at,
                },
            )?;
            if tr.from < Stage::Active && tr.to >= Stage::Active {
                let mapping = self.orchestrator.reveal(&id)?;
                self.record(now, PlatformEvent::AliasesRevealed { challenge_id: id, mapping })?;
            }
        }
        Ok((planned, transitions))
    }

    /// Evaluation phase: refreshes partial scores and freezes closed challenges.
    pub fn evaluate(&mut self, now: Timestamp) -> Result<usize, PlatformError> {
        let mut finalized = 0;
        let ids: Vec<(String, Stage)> = self
            .orchestrator
            .challenges()
            .filter(|c| c.stage >= Stage::Active && !self.evaluator.is_final(c.id()))
            .map(|c| (c.id().to_string(), c.stage))
            .collect();
        for (id, stage) in ids {
            let challenge: &Challenge = self.orchestrator.get(&id)?;
            let subs: Vec<&ForecastSubmission> = self
                .submissions
                .values()
                .filter(|s| s.challenge_id == id)
                .collect();
            if stage == Stage::Closed {
                let report = self.evaluator.finalize(challenge, &subs, &self.store, now)?.clone();
                finalized += 1;
                self.record(now, PlatformEvent::ScoresFinalized { report })?;
            } else {
                self.evaluator.update_partial(challenge, &subs, &self.store, now)?;
            }
        }
        Ok(finalized)
    }

    /// Runs ingestion, orchestration and evaluation at the current clock time.
    pub fn tick(&mut self) -> Result<TickReport, PlatformError> {
        self.tick_with(|_| {})
    }

    /// Like [`Platform::tick`], letting in-process participants act between
    /// orchestration and evaluation.
    pub fn tick_with(&mut self, participants: impl FnOnce(&mut Platform)) -> Result<TickReport, PlatformError> {
        let now = self.now();
        let polls = self.ingest(now);
        let (planned, transitions) = self.orchestrate(now)?;
        participants(self);
        let finalized = self.evaluate(self.now())?;
        Ok(TickReport {
            at: Some(now),
            poll_failures: polls.iter().filter(|p| p.error.is_some()).count(),
            polls: polls.len(),
            planned,
            transitions,
            finalized,
        })
    }

    /// Closed challenges with a frozen final report.
    pub fn closed_challenges(&self) -> Vec<ClosedChallenge> {
        self.orchestrator
            .challenges()
            .filter(|c| c.stage == Stage::Closed && self.evaluator.is_final(c.id()))
            .filter_map(|c| {
                Some(ClosedChallenge {
                    challenge_id: c.id().to_string(),
                    bucket: c.spec.bucket.clone(),
                    registration_open_at: c.spec.registration_open_at,
                    closed_at: c.closed_at?,
                })
            })
            .collect()
    }

    pub fn final_scores(&self) -> Vec<ChallengeScore> {
        self.evaluator
            .final_reports()
            .flat_map(|r| r.challenge_scores.iter().cloned())
            .collect()
    }

    /// Leaderboard at `now`, served from a short-lived cache.
    pub fn leaderboard_at(&mut self, window: Window, scope: &Scope, now: Timestamp) -> Vec<LeaderboardEntry> {
        let key = (window, serde_json::to_string(scope).expect("scope serializes"));
        let ttl = self.config.leaderboard_cache.delta();
        if let Some((at, entries)) = self.leaderboard_cache.get(&key) {
            if *at <= now && now - *at < ttl {
                return entries.clone();
            }
        }
        let models = self.models();
        let entries = compute_leaderboard(&models, &self.closed_challenges(), &self.final_scores(), scope, window, now);
        self.leaderboard_cache.insert(key, (now, entries.clone()));
        entries
    }

    pub fn leaderboard(&mut self, window: Window, scope: &Scope) -> Vec<LeaderboardEntry> {
        let now = self.now();
        self.leaderboard_at(window, scope, now)
    }
}
