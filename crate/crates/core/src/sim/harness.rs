//! Runs a scenario under a stepped virtual clock and reports the outcome.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::TimeDelta;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::scenario::{Assertion, ScenarioSpec};
use crate::audit::{check_leakage, LeakageViolation};
use crate::clock::{Clock, VirtualClock};
use crate::config::build_ingestion;
use crate::domain::{align_to_grid, context_grid, Scope, SeriesId, Timestamp};
use crate::evaluation::{ChallengeScore, SeriesScore};
use crate::gateway::{ArenaApi, GatewayError, Registration, RegisterModelRequest, SubmitRequest};
use crate::leaderboard::{LeaderboardEntry, Window};
use crate::orchestrator::{ScheduleConfig, Stage};
use crate::platform::{Platform, PlatformConfig};
use crate::runtime::{Runtime, RuntimeError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptOutcome {
    pub participant: String,
    pub challenge_id: String,
    pub alias: String,
    pub at: Timestamp,
    pub accepted: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeOutcome {
    pub challenge_id: String,
    pub t_p: Timestamp,
    pub stage: Stage,
    pub closed_at: Option<Timestamp>,
    pub series: Vec<SeriesId>,
    pub participants: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub assertion: Assertion,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    pub start: Timestamp,
    pub end: Timestamp,
    pub ticks: usize,
    /// Participant name → model id.
    pub models: BTreeMap<String, String>,
    pub challenges_planned: usize,
    pub challenges_closed: usize,
    pub challenges: Vec<ChallengeOutcome>,
    pub challenge_scores: Vec<ChallengeScore>,
    pub series_scores: Vec<SeriesScore>,
    pub leaderboards: BTreeMap<Window, Vec<LeaderboardEntry>>,
    pub scripted: Vec<ScriptOutcome>,
    pub leakage_violations: Vec<LeakageViolation>,
    pub assertions: Vec<AssertionResult>,
    pub passed: bool,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn leaderboard_entry(&self, window: Window, participant: &str) -> Option<&LeaderboardEntry> {
        let id = self.models.get(participant)?;
        self.leaderboards.get(&window)?.iter().find(|e| &e.model_id == id)
    }
}

struct Scripted {
    participant: usize,
    submission: usize,
}

/// Builds the runtime for `spec` on a stepped clock starting at `spec.start`.
pub fn build_runtime(spec: &ScenarioSpec, clock: Arc<VirtualClock>) -> Result<Runtime, RuntimeError> {
    let history = spec.history.map(|h| h.delta()).unwrap_or_default();
    let epoch = spec.start - history - TimeDelta::days(1);
    let ingestion = build_ingestion(&spec.providers, epoch, spec.seed, &spec.base_dir)?;
    let config = PlatformConfig {
        secret: spec.secret.clone(),
        operator_key: spec.operator_key.clone(),
        api_rate_limit: spec.api_rate_limit,
        evaluation: spec.evaluation,
        plan_until: Some(spec.start + spec.duration.delta()),
        ..PlatformConfig::new("", "")
    };
    let schedule = ScheduleConfig {
        buckets: spec.buckets.clone(),
    };
    let platform = Platform::new(config, schedule, ingestion, clock)?;
    let mut runtime = Runtime::new(platform);
    if spec.history.is_some() {
        runtime.backfill(history)?;
    }
    runtime.add_baselines(&spec.baselines)?;
    Ok(runtime)
}

fn execute(
    platform: &mut Platform,
    spec: &ScenarioSpec,
    job: &Scripted,
    registration: &Registration,
    challenge_id: &str,
) -> Vec<ScriptOutcome> {
    let participant = &spec.participants[job.participant];
    let script = &participant.submissions[job.submission];
    let Ok(summary) = platform.challenge_at(challenge_id, platform.now()) else {
        return Vec::new();
    };
    let targets: Vec<String> = match script.series {
        Some(i) => summary.series.get(i).map(|s| s.alias.clone()).into_iter().collect(),
        None => summary.series.iter().map(|s| s.alias.clone()).collect(),
    };
    let kind = script.model.resolve(summary.frequency);
    let mut out = Vec::new();
    for alias in targets {
        let values = platform
            .get_context(&registration.api_key, challenge_id, &alias)
            .ok()
            .and_then(|ctx| {
                let grid = context_grid(ctx.t_p, ctx.frequency, ctx.context_length);
                kind.forecast(&align_to_grid(&grid, &ctx.points), ctx.horizon_steps).ok()
            })
            .unwrap_or_else(|| vec![0.0; summary.horizon_steps]);
        let at = platform.now();
        let result = platform.submit_forecast(
            &registration.api_key,
            challenge_id,
            SubmitRequest {
                alias: alias.clone(),
                model_id: registration.card.model_id.clone(),
                values,
                client_submit_time: Some(at),
                external_data_used: false,
            },
        );
        out.push(ScriptOutcome {
            participant: participant.name.clone(),
            challenge_id: challenge_id.to_string(),
            alias,
            at,
            accepted: result.is_ok(),
            error: result.err().map(|e: GatewayError| e.code().to_string()),
        });
    }
    out
}

pub fn run_scenario(spec: &ScenarioSpec) -> Result<ScenarioReport, RuntimeError> {
    let clock = Arc::new(VirtualClock::stepped(spec.start));
    let mut runtime = build_runtime(spec, clock.clone())?;
    let mut registrations = Vec::new();
    for p in &spec.participants {
        registrations.push(
            runtime
                .platform
                .register_model(RegisterModelRequest::new(&p.name, "scripted", "0", false))?,
        );
    }
    let mut pending: Vec<Scripted> = spec
        .participants
        .iter()
        .enumerate()
        .flat_map(|(p, part)| (0..part.submissions.len()).map(move |s| Scripted { participant: p, submission: s }))
        .collect();
    let mut scripted = Vec::new();
    let end = spec.end();
    let tick = spec.tick.delta();
    let mut ticks = 0usize;
    runtime.step()?;
    ticks += 1;
    while clock.now() < end {
        let next = (clock.now() + tick).min(end);
        loop {
            let mut ordered: Vec<_> = runtime.platform.orchestrator().challenges().map(|c| (c.spec.t_p, c.id().to_string())).collect();
            ordered.sort();
            let now = clock.now();
            let due = pending
                .iter()
                .enumerate()
                .filter_map(|(i, job)| {
                    let script = &spec.participants[job.participant].submissions[job.submission];
                    let (t_p, id) = ordered.get(script.challenge)?;
                    let at = (*t_p + script.offset.delta()).max(now);
                    (at < next).then(|| (at, i, id.clone()))
                })
                .min();
            let Some((at, i, id)) = due else {
                break;
            };
            clock.advance_to(at);
            let job = pending.remove(i);
            let reg = &registrations[job.participant];
            scripted.extend(execute(&mut runtime.platform, spec, &job, reg, &id));
        }
        clock.advance_to(next);
        runtime.step()?;
        ticks += 1;
    }
    let now = clock.now();
    info!(scenario = %spec.name, ticks, "scenario finished");

    let platform = &mut runtime.platform;
    let mut models: BTreeMap<String, String> = runtime
        .agents
        .iter()
        .map(|a| (a.name().to_string(), a.model_id().to_string()))
        .collect();
    for (p, reg) in spec.participants.iter().zip(&registrations) {
        models.insert(p.name.clone(), reg.card.model_id.clone());
    }
    let mut challenges: Vec<ChallengeOutcome> = platform
        .orchestrator()
        .challenges()
        .map(|c| ChallengeOutcome {
            challenge_id: c.id().to_string(),
            t_p: c.spec.t_p,
            stage: c.stage,
            closed_at: c.closed_at,
            series: c.series(),
            participants: c.participants.len(),
        })
        .collect();
    challenges.sort_by(|a, b| (a.t_p, &a.challenge_id).cmp(&(b.t_p, &b.challenge_id)));
    let leaderboards = Window::ALL
        .iter()
        .map(|w| (*w, platform.leaderboard_at(*w, &Scope::all(), now)))
        .collect();
    let challenge_scores = platform.final_scores();
    let series_scores = platform
        .evaluator()
        .final_reports()
        .flat_map(|r| r.series_scores.iter().cloned())
        .collect();
    let leakage_violations = check_leakage(platform);
    let mut report = ScenarioReport {
        scenario: spec.name.clone(),
        seed: spec.seed,
        start: spec.start,
        end: now,
        ticks,
        models,
        challenges_planned: challenges.len(),
        challenges_closed: challenges.iter().filter(|c| c.stage == Stage::Closed).count(),
        challenges,
        challenge_scores,
        series_scores,
        leaderboards,
        scripted,
        leakage_violations,
        assertions: Vec::new(),
        passed: true,
    };
    report.assertions = spec.assertions.iter().map(|a| check(a, &report)).collect();
    report.passed = report.assertions.iter().all(|a| a.passed);
    Ok(report)
}

fn check(assertion: &Assertion, report: &ScenarioReport) -> AssertionResult {
    let entry = |model: &str, window: Window| report.leaderboard_entry(window, model);
    let (passed, detail) = match assertion {
        Assertion::ClosedChallenges { equals } => (
            report.challenges_closed == *equals,
            format!("{} closed of {} planned", report.challenges_closed, report.challenges_planned),
        ),
        Assertion::ParticipationRate { model, equals, window } => match entry(model, *window) {
            Some(e) => (
                (e.participation_rate - equals).abs() <= 1e-12,
                format!("participation rate {} ({}/{})", e.participation_rate, e.coverage_count, e.n_available),
            ),
            None => (false, format!("{model} not on the {window} leaderboard")),
        },
        Assertion::RawMaseLess { model, than, window } => match (entry(model, *window), entry(than, *window)) {
            (Some(a), Some(b)) => (a.raw_mase < b.raw_mase, format!("{model} {} vs {than} {}", a.raw_mase, b.raw_mase)),
            _ => (false, format!("{model} or {than} missing from the {window} leaderboard")),
        },
        Assertion::RawMaseBelow { model, value, window } => match entry(model, *window) {
            Some(e) => (e.raw_mase < *value, format!("raw MASE {}", e.raw_mase)),
            None => (false, format!("{model} not on the {window} leaderboard")),
        },
        Assertion::RawMaseAbove { model, value, window } => match entry(model, *window) {
            Some(e) => (e.raw_mase > *value, format!("raw MASE {}", e.raw_mase)),
            None => (false, format!("{model} not on the {window} leaderboard")),
        },
        Assertion::AllRejected { participant, reason } => {
            let mine: Vec<_> = report.scripted.iter().filter(|s| &s.participant == participant).collect();
            let ok = !mine.is_empty() && mine.iter().all(|s| !s.accepted && s.error.as_deref() == Some(reason));
            (ok, format!("{} scripted submissions", mine.len()))
        }
        Assertion::AllAccepted { participant } => {
            let mine: Vec<_> = report.scripted.iter().filter(|s| &s.participant == participant).collect();
            let ok = !mine.is_empty() && mine.iter().all(|s| s.accepted);
            (ok, format!("{} scripted submissions", mine.len()))
        }
        Assertion::NoLeakage => (
            report.leakage_violations.is_empty(),
            format!("{} violations", report.leakage_violations.len()),
        ),
    };
    AssertionResult {
        assertion: assertion.clone(),
        passed,
        detail,
    }
}
