//! Participant-facing operations: model registration, challenge listing,
//! context serving and forecast submission, plus the operator audit view.
//!
//! Every check that matters for leakage runs against the server clock. The
//! participant-supplied `client_submit_time` is recorded but never trusted.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{BucketKey, Frequency, IsoDuration, Scope, SeriesId, Timestamp};
use crate::evaluation::ChallengeReport;
use crate::journal::{JournalEntry, PlatformEvent};
use crate::orchestrator::{keyed_token, stage_at, Challenge, ChallengeSpec, SeriesAlias, Stage};
use crate::platform::{Platform, PlatformError};
use crate::ratelimit::{RateLimit, RateLimiter};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("missing or unknown API key")]
    Unauthorized,
    #[error("operator key required")]
    OperatorOnly,
    #[error("API key does not belong to model {0}")]
    Forbidden(String),
    #[error("rate limit exceeded; retry after {retry_after_secs}s")]
    RateLimited { retry_after_secs: i64 },
    #[error("unknown challenge {0}")]
    UnknownChallenge(String),
    #[error("unknown series alias {alias} in challenge {challenge_id}")]
    UnknownAlias { challenge_id: String, alias: String },
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("challenge {challenge_id} is {stage}, not in registration")]
    NotInRegistration { challenge_id: String, stage: Stage },
    #[error("received at {received_at}, after the cut-off {t_p}")]
    DeadlinePassed { t_p: Timestamp, received_at: Timestamp },
    #[error("expected {expected} forecast values, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("forecast value at index {index} is not finite")]
    NonFiniteValue { index: usize },
    #[error("model card field `{0}` is missing or empty")]
    MissingDisclosure(&'static str),
    #[error("scores for {0} are not available yet")]
    NoScores(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl GatewayError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::Unauthorized => "unauthorized",
            GatewayError::OperatorOnly => "operator_only",
            GatewayError::Forbidden(_) => "forbidden",
            GatewayError::RateLimited { .. } => "rate_limited",
            GatewayError::UnknownChallenge(_) => "unknown_challenge",
            GatewayError::UnknownAlias { .. } => "unknown_alias",
            GatewayError::UnknownModel(_) => "unknown_model",
            GatewayError::NotInRegistration { .. } => "not_in_registration",
            GatewayError::DeadlinePassed { .. } => "deadline_passed",
            GatewayError::WrongLength { .. } => "wrong_length",
            GatewayError::NonFiniteValue { .. } => "non_finite_value",
            GatewayError::MissingDisclosure(_) => "missing_disclosure",
            GatewayError::NoScores(_) => "no_scores",
            GatewayError::Internal(_) => "internal",
        }
    }
}

impl From<PlatformError> for GatewayError {
    fn from(e: PlatformError) -> Self {
        GatewayError::Internal(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticipationMode {
    Containerized,
    #[default]
    Byop,
}

/// Registration payload. Every field is optional on the wire; a missing one
/// is reported by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegisterModelRequest {
    #[serde(default)]
    pub declared_name_version: Option<String>,
    #[serde(default)]
    pub architecture_class: Option<String>,
    #[serde(default)]
    pub approx_size: Option<String>,
    #[serde(default)]
    pub external_data_used: Option<bool>,
    #[serde(default)]
    pub mode: ParticipationMode,
}

impl RegisterModelRequest {
    pub fn new(name: &str, architecture: &str, size: &str, external_data_used: bool) -> Self {
        Self {
            declared_name_version: Some(name.to_string()),
            architecture_class: Some(architecture.to_string()),
            approx_size: Some(size.to_string()),
            external_data_used: Some(external_data_used),
            mode: ParticipationMode::Byop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelCard {
    pub model_id: String,
    pub declared_name_version: String,
    pub architecture_class: String,
    pub approx_size: String,
    pub external_data_used: bool,
    pub mode: ParticipationMode,
    pub registered_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    pub card: ModelCard,
    /// Shown once; the server only keeps its digest.
    pub api_key: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChallengeFilter {
    #[serde(default)]
    pub state: Option<Stage>,
    #[serde(flatten)]
    pub scope: Scope,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub alias: String,
    /// Populated only once identities are public.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub series: Option<SeriesId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub display_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeSummary {
    pub challenge_id: String,
    pub domain: String,
    pub frequency: Frequency,
    pub horizon: IsoDuration,
    pub horizon_steps: usize,
    pub context_length: usize,
    pub selection: String,
    pub stage: Stage,
    pub announce_at: Timestamp,
    pub registration_open_at: Timestamp,
    pub t_p: Timestamp,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed_at: Option<Timestamp>,
    pub series: Vec<SeriesEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPayload {
    pub challenge_id: String,
    pub series_alias: String,
    pub frequency: Frequency,
    pub t_p: Timestamp,
    pub horizon_steps: usize,
    pub context_length: usize,
    pub served_at: Timestamp,
    /// Observations in `(t_p - c·step, t_p]` visible at `served_at`.
    pub points: Vec<(Timestamp, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub alias: String,
    pub model_id: String,
    pub values: Vec<f64>,
    #[serde(default)]
    pub client_submit_time: Option<Timestamp>,
    #[serde(default)]
    pub external_data_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSubmission {
    pub challenge_id: String,
    pub series_alias: String,
    pub model_id: String,
    pub values: Vec<f64>,
    pub client_submit_time: Option<Timestamp>,
    pub received_at: Timestamp,
    pub external_data_used: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub challenge_id: String,
    pub alias: String,
    pub model_id: String,
    pub received_at: Timestamp,
    pub replaced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditTrail {
    pub spec: ChallengeSpec,
    pub stage: Stage,
    pub closed_at: Option<Timestamp>,
    pub aliases: Vec<SeriesAlias>,
    pub events: Vec<JournalEntry>,
}

/// What an agent or SDK needs from the platform. Implemented in-process by
/// [`Platform`] and over HTTP by the server.
pub trait ArenaApi {
    fn register_model(&mut self, request: RegisterModelRequest) -> Result<Registration, GatewayError>;
    fn list_challenges(&mut self, filter: &ChallengeFilter) -> Result<Vec<ChallengeSummary>, GatewayError>;
    fn get_context(&mut self, api_key: &str, challenge_id: &str, alias: &str) -> Result<ContextPayload, GatewayError>;
    fn submit_forecast(&mut self, api_key: &str, challenge_id: &str, request: SubmitRequest) -> Result<Receipt, GatewayError>;
}

pub(crate) fn key_digest(api_key: &str) -> String {
    data_encoding::HEXLOWER.encode(&Sha256::digest(api_key.as_bytes()))
}

fn required(value: Option<String>, field: &'static str) -> Result<String, GatewayError> {
    match value {
        Some(v) if !v.trim().is_empty() => Ok(v.trim().to_string()),
        _ => Err(GatewayError::MissingDisclosure(field)),
    }
}

/// Stage from the stored state and the clock, whichever is further along.
fn live_stage(ch: &Challenge, now: Timestamp) -> Stage {
    ch.stage.max(stage_at(&ch.spec, now, None).0)
}

impl Platform {
    fn summary(&self, ch: &Challenge, now: Timestamp) -> ChallengeSummary {
        let stage = live_stage(ch, now);
        let public = !ch.spec.is_random() || stage >= Stage::Active;
        let series = ch
            .aliases
            .iter()
            .map(|a| SeriesEntry {
                alias: a.alias.clone(),
                series: public.then(|| a.true_series.clone()),
                display_name: public
                    .then(|| self.ingestion.series_info(&a.true_series).map(|i| i.display_name.clone()))
                    .flatten(),
            })
            .collect();
        let spec = &ch.spec;
        ChallengeSummary {
            challenge_id: spec.challenge_id.clone(),
            domain: spec.bucket.domain.clone(),
            frequency: spec.bucket.frequency,
            horizon: spec.bucket.horizon,
            horizon_steps: spec.horizon_steps,
            context_length: spec.context_length,
            selection: if spec.is_random() { "random" } else { "fixed" }.to_string(),
            stage,
            announce_at: spec.announce_at,
            registration_open_at: spec.registration_open_at,
            t_p: spec.t_p,
            closed_at: ch.closed_at,
            series,
        }
    }

    fn authenticate(&mut self, api_key: &str, now: Timestamp) -> Result<String, GatewayError> {
        let model_id = self
            .keys
            .get(&key_digest(api_key))
            .cloned()
            .ok_or(GatewayError::Unauthorized)?;
        let limit = self.config.api_rate_limit;
        self.limiters
            .entry(model_id.clone())
            .or_insert_with(|| RateLimiter::new(limit))
            .try_acquire(now)
            .map_err(|wait| GatewayError::RateLimited {
                retry_after_secs: (wait.num_milliseconds() + 999) / 1000,
            })?;
        Ok(model_id)
    }

    /// Keys are derived from the platform secret, so a restarted server can
    /// hand in-process agents their key again.
    pub(crate) fn derive_api_key(&self, model_id: &str) -> String {
        format!("ak_{}", keyed_token(self.config.secret.as_bytes(), &format!("api-key/{model_id}")))
    }

    pub fn register_model_at(&mut self, request: RegisterModelRequest, now: Timestamp) -> Result<Registration, GatewayError> {
        let card = ModelCard {
            model_id: format!("m{:04}", self.models.len() + 1),
            declared_name_version: required(request.declared_name_version, "declared_name_version")?,
            architecture_class: required(request.architecture_class, "architecture_class")?,
            approx_size: required(request.approx_size, "approx_size")?,
            external_data_used: request
                .external_data_used
                .ok_or(GatewayError::MissingDisclosure("external_data_used"))?,
            mode: request.mode,
            registered_at: now,
        };
        let api_key = self.derive_api_key(&card.model_id);
        self.record(
            now,
            PlatformEvent::ModelRegistered {
                card: card.clone(),
                key_digest: key_digest(&api_key),
                rate_limit: self.config.api_rate_limit,
            },
        )?;
        Ok(Registration { card, api_key })
    }

    pub fn list_challenges_at(&self, filter: &ChallengeFilter, now: Timestamp) -> Vec<ChallengeSummary> {
        let mut out: Vec<ChallengeSummary> = self
            .orchestrator
            .challenges()
            .filter(|c| filter.scope.matches(&c.spec.bucket))
            .map(|c| self.summary(c, now))
            .filter(|s| filter.state.is_none_or(|st| st == s.stage))
            .collect();
        out.sort_by(|a, b| (a.t_p, &a.challenge_id).cmp(&(b.t_p, &b.challenge_id)));
        out
    }

    pub fn challenge_at(&self, challenge_id: &str, now: Timestamp) -> Result<ChallengeSummary, GatewayError> {
        let ch = self
            .orchestrator
            .get(challenge_id)
            .map_err(|_| GatewayError::UnknownChallenge(challenge_id.to_string()))?;
        Ok(self.summary(ch, now))
    }

    pub fn get_context_at(
        &mut self,
        api_key: &str,
        challenge_id: &str,
        alias: &str,
        now: Timestamp,
    ) -> Result<ContextPayload, GatewayError> {
        let model_id = self.authenticate(api_key, now)?;
        let ch = self
            .orchestrator
            .get(challenge_id)
            .map_err(|_| GatewayError::UnknownChallenge(challenge_id.to_string()))?;
        let stage = live_stage(ch, now);
        if stage != Stage::Registration {
            return Err(GatewayError::NotInRegistration {
                challenge_id: challenge_id.to_string(),
                stage,
            });
        }
        let entry = ch.alias(alias).ok_or_else(|| GatewayError::UnknownAlias {
            challenge_id: challenge_id.to_string(),
            alias: alias.to_string(),
        })?;
        let spec = &ch.spec;
        let view = self
            .store
            .as_of(&entry.true_series, spec.context_start(), spec.t_p, now)
            .map_err(|e| GatewayError::Internal(e.to_string()))?;
        let payload = ContextPayload {
            challenge_id: challenge_id.to_string(),
            series_alias: alias.to_string(),
            frequency: spec.bucket.frequency,
            t_p: spec.t_p,
            horizon_steps: spec.horizon_steps,
            context_length: spec.context_length,
            served_at: now,
            points: view.points,
        };
        self.record(
            now,
            PlatformEvent::ContextServed {
                model_id,
                payload: payload.clone(),
            },
        )?;
        Ok(payload)
    }

    fn check_submission(&self, challenge_id: &str, request: &SubmitRequest, now: Timestamp) -> Result<(), GatewayError> {
        if !self.models.contains_key(&request.model_id) {
            return Err(GatewayError::UnknownModel(request.model_id.clone()));
        }
        let ch = self
            .orchestrator
            .get(challenge_id)
            .map_err(|_| GatewayError::UnknownChallenge(challenge_id.to_string()))?;
        if now > ch.spec.t_p {
            return Err(GatewayError::DeadlinePassed {
                t_p: ch.spec.t_p,
                received_at: now,
            });
        }
        let stage = live_stage(ch, now);
        if stage != Stage::Registration {
            return Err(GatewayError::NotInRegistration {
                challenge_id: challenge_id.to_string(),
                stage,
            });
        }
        if ch.alias(&request.alias).is_none() {
            return Err(GatewayError::UnknownAlias {
                challenge_id: challenge_id.to_string(),
                alias: request.alias.clone(),
            });
        }
        if request.values.len() != ch.spec.horizon_steps {
            return Err(GatewayError::WrongLength {
                expected: ch.spec.horizon_steps,
                got: request.values.len(),
            });
        }
        if let Some(index) = request.values.iter().position(|v| !v.is_finite()) {
            return Err(GatewayError::NonFiniteValue { index });
        }
        Ok(())
    }

    pub fn submit_forecast_at(
        &mut self,
        api_key: &str,
        challenge_id: &str,
        request: SubmitRequest,
        now: Timestamp,
    ) -> Result<Receipt, GatewayError> {
        let owner = self.authenticate(api_key, now)?;
        let checked = if owner != request.model_id {
            Err(GatewayError::Forbidden(request.model_id.clone()))
        } else {
            self.check_submission(challenge_id, &request, now)
        };
        if let Err(e) = checked {
            self.record(
                now,
                PlatformEvent::SubmissionRejected {
                    challenge_id: challenge_id.to_string(),
                    series_alias: request.alias,
                    model_id: owner,
                    client_submit_time: request.client_submit_time,
                    received_at: now,
                    reason: e.code().to_string(),
                },
            )?;
            return Err(e);
        }
        let t_p = self.orchestrator.get(challenge_id).expect("checked").spec.t_p;
        assert!(now <= t_p, "accepted a submission after the cut-off");
        let key = (challenge_id.to_string(), request.alias.clone(), request.model_id.clone());
        let replaced = self.submissions.contains_key(&key);
        let submission = ForecastSubmission {
            challenge_id: challenge_id.to_string(),
            series_alias: request.alias,
            model_id: request.model_id,
            values: request.values,
            client_submit_time: request.client_submit_time,
            received_at: now,
            external_data_used: request.external_data_used,
        };
        let receipt = Receipt {
            challenge_id: submission.challenge_id.clone(),
            alias: submission.series_alias.clone(),
            model_id: submission.model_id.clone(),
            received_at: now,
            replaced,
        };
        self.record(now, PlatformEvent::SubmissionAccepted { submission, replaced })?;
        Ok(receipt)
    }

    pub fn audit_trail(&self, operator_key: &str, challenge_id: &str) -> Result<AuditTrail, GatewayError> {
        if operator_key.is_empty() || operator_key != self.config.operator_key {
            return Err(GatewayError::OperatorOnly);
        }
        let ch = self
            .orchestrator
            .get(challenge_id)
            .map_err(|_| GatewayError::UnknownChallenge(challenge_id.to_string()))?;
        Ok(AuditTrail {
            spec: ch.spec.clone(),
            stage: ch.stage,
            closed_at: ch.closed_at,
            aliases: ch.aliases.clone(),
            events: self.journal.audit_trail(challenge_id),
        })
    }

    /// Final scores when frozen, otherwise the latest partial scores.
    pub fn scores(&self, challenge_id: &str) -> Result<ChallengeReport, GatewayError> {
        self.orchestrator
            .get(challenge_id)
            .map_err(|_| GatewayError::UnknownChallenge(challenge_id.to_string()))?;
        self.evaluator
            .report(challenge_id)
            .cloned()
            .ok_or_else(|| GatewayError::NoScores(challenge_id.to_string()))
    }

    pub fn models(&self) -> Vec<ModelCard> {
        self.models.values().cloned().collect()
    }

    pub fn model(&self, model_id: &str) -> Option<&ModelCard> {
        self.models.get(model_id)
    }

    pub fn buckets(&self) -> Vec<BucketKey> {
        self.orchestrator.config().buckets.iter().map(|b| b.bucket()).collect()
    }

    pub fn api_rate_limit(&self) -> RateLimit {
        self.config.api_rate_limit
    }
}

impl ArenaApi for Platform {
    fn register_model(&mut self, request: RegisterModelRequest) -> Result<Registration, GatewayError> {
        let now = self.now();
        self.register_model_at(request, now)
    }

    fn list_challenges(&mut self, filter: &ChallengeFilter) -> Result<Vec<ChallengeSummary>, GatewayError> {
        Ok(self.list_challenges_at(filter, self.now()))
    }

    fn get_context(&mut self, api_key: &str, challenge_id: &str, alias: &str) -> Result<ContextPayload, GatewayError> {
        let now = self.now();
        self.get_context_at(api_key, challenge_id, alias, now)
    }

    fn submit_forecast(&mut self, api_key: &str, challenge_id: &str, request: SubmitRequest) -> Result<Receipt, GatewayError> {
        let now = self.now();
        self.submit_forecast_at(api_key, challenge_id, request, now)
    }
}

#[cfg(test)]
mod tests;
