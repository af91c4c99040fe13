//! Baseline participants. They use the same API as any external participant:
//! list challenges in registration, fetch context, submit.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::forecast::BaselineKind;
use crate::domain::{align_to_grid, context_grid, Frequency, Scope};
use crate::evaluation::seasonal_period;
use crate::gateway::{
    ArenaApi, ChallengeFilter, GatewayError, ParticipationMode, Registration, RegisterModelRequest, SubmitRequest,
};
use crate::orchestrator::Stage;

pub const BASELINE_ARCHITECTURE: &str = "statistical baseline";

fn default_periods() -> usize {
    4
}

/// Baseline recipe; the seasonal period defaults to the bucket's natural one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineModel {
    Naive,
    MovingAverage {
        window: usize,
    },
    SeasonalAverage {
        #[serde(default)]
        period: Option<usize>,
        #[serde(default = "default_periods")]
        periods: usize,
    },
}

impl BaselineModel {
    pub fn resolve(&self, frequency: Frequency) -> BaselineKind {
        match *self {
            BaselineModel::Naive => BaselineKind::Naive,
            BaselineModel::MovingAverage { window } => BaselineKind::MovingAverage { window },
            BaselineModel::SeasonalAverage { period, periods } => BaselineKind::SeasonalAverage {
                period: period.unwrap_or_else(|| seasonal_period(frequency)),
                periods,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub name: String,
    pub model: BaselineModel,
    /// Buckets to auto-enroll in; empty means all.
    #[serde(default)]
    pub scopes: Vec<Scope>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentTickReport {
    pub submitted: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct BaselineAgent {
    config: BaselineConfig,
    registration: Registration,
    done: BTreeSet<(String, String)>,
}

impl BaselineAgent {
    pub fn register<A: ArenaApi + ?Sized>(api: &mut A, config: BaselineConfig) -> Result<Self, GatewayError> {
        let registration = api.register_model(RegisterModelRequest {
            declared_name_version: Some(config.name.clone()),
            architecture_class: Some(BASELINE_ARCHITECTURE.into()),
            approx_size: Some("0 parameters".into()),
            external_data_used: Some(false),
            mode: ParticipationMode::Containerized,
        })?;
        Ok(Self {
            config,
            registration,
            done: BTreeSet::new(),
        })
    }

    /// Re-attaches to an existing registration.
    pub fn resume(config: BaselineConfig, registration: Registration) -> Self {
        Self {
            config,
            registration,
            done: BTreeSet::new(),
        }
    }

    pub fn api_key(&self) -> &str {
        &self.registration.api_key
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn model_id(&self) -> &str {
        &self.registration.card.model_id
    }

    fn enrolled(&self, scope_match: impl Fn(&Scope) -> bool) -> bool {
        self.config.scopes.is_empty() || self.config.scopes.iter().any(scope_match)
    }

    /// Submits a forecast for every series of every challenge currently in
    /// registration that it has not answered yet.
    pub fn tick<A: ArenaApi + ?Sized>(&mut self, api: &mut A) -> AgentTickReport {
        let mut report = AgentTickReport::default();
        let filter = ChallengeFilter {
            state: Some(Stage::Registration),
            scope: Scope::all(),
        };
        let challenges = match api.list_challenges(&filter) {
            Ok(c) => c,
            Err(e) => {
                report.failures.push(e.to_string());
                return report;
            }
        };
        for ch in challenges {
            let bucket = crate::domain::BucketKey::new(ch.domain.clone(), ch.frequency, ch.horizon);
            if !self.enrolled(|s| s.matches(&bucket)) {
                continue;
            }
            let kind = self.config.model.resolve(ch.frequency);
            for entry in &ch.series {
                let key = (ch.challenge_id.clone(), entry.alias.clone());
                if self.done.contains(&key) {
                    continue;
                }
                let outcome = api
                    .get_context(&self.registration.api_key, &ch.challenge_id, &entry.alias)
                    .and_then(|ctx| {
                        let grid = context_grid(ctx.t_p, ctx.frequency, ctx.context_length);
                        let context = align_to_grid(&grid, &ctx.points);
                        let values = kind
                            .forecast(&context, ctx.horizon_steps)
                            .map_err(|e| GatewayError::Internal(e.to_string()))?;
                        api.submit_forecast(
                            &self.registration.api_key,
                            &ch.challenge_id,
                            SubmitRequest {
                                alias: entry.alias.clone(),
                                model_id: self.model_id().to_string(),
                                values,
                                client_submit_time: None,
                                external_data_used: false,
                            },
                        )
                    });
                match outcome {
                    Ok(_) => {
                        report.submitted += 1;
                        self.done.insert(key);
                    }
                    Err(e) => {
                        warn!(agent = %self.config.name, challenge = %ch.challenge_id, alias = %entry.alias, "{e}");
                        report.failures.push(format!("{}/{}: {e}", ch.challenge_id, entry.alias));
                    }
                }
            }
        }
        report
    }
}

/// One pass of every agent against `api`.
pub fn run_agents<A: ArenaApi + ?Sized>(api: &mut A, agents: &mut [BaselineAgent]) -> Vec<AgentTickReport> {
    agents.iter_mut().map(|a| a.tick(api)).collect()
}
