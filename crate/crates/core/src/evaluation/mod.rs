//! Scoring of submitted forecasts against realised actuals.
//!
//! The MASE scale of each series is fixed from the context visible at the
//! cut-off `t_p`; actuals for the final score are read as of the closure
//! instant, so corrections arriving later never move a finalized number.

pub mod metrics;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{align_to_grid, context_grid, BucketKey, SeriesId, Timestamp};
use crate::gateway::ForecastSubmission;
use crate::num::{mean, Scalar};
use crate::orchestrator::{Challenge, ChallengeSpec, Stage};
use crate::store::{Store, StoreError};

pub use metrics::{mase, mase_scale, mase_scale_with_fallback, seasonal_period, MaseAccumulator, MetricError, Scale};

pub const DEFAULT_COVERAGE_FLOOR: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("challenge {0} is not closed")]
    NotClosed(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreStatus {
    Partial,
    Final,
    Void,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoidReason {
    DegenerateScale,
    LowCoverage,
    NoActuals,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    /// Minimum fraction of horizon steps with an actual for a final score.
    pub coverage_floor: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            coverage_floor: DEFAULT_COVERAGE_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesScale<T = f64> {
    pub alias: String,
    pub series: SeriesId,
    pub scale: Scale<T>,
    /// Seasonal period actually used.
    pub period: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesScore<T = f64> {
    pub challenge_id: String,
    pub model_id: String,
    pub alias: String,
    pub series: SeriesId,
    pub mase: Option<T>,
    pub steps_observed: usize,
    pub horizon_steps: usize,
    pub status: ScoreStatus,
    pub void_reason: Option<VoidReason>,
}

/// Per-model aggregate: simple mean over the model's non-void series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeScore<T = f64> {
    pub challenge_id: String,
    pub model_id: String,
    pub aggregate_mase: T,
    pub series_scored: usize,
    pub series_submitted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeReport<T = f64> {
    pub challenge_id: String,
    pub bucket: BucketKey,
    pub t_p: Timestamp,
    /// `Partial` while running, `Final` once frozen.
    pub status: ScoreStatus,
    pub evaluated_at: Timestamp,
    /// Transaction time at which actuals were read.
    pub actuals_as_of: Timestamp,
    pub scales: Vec<SeriesScale<T>>,
    /// Horizon actuals per alias; `None` marks a missing step.
    pub actuals: BTreeMap<String, Vec<Option<T>>>,
    pub degenerate: Vec<String>,
    pub series_scores: Vec<SeriesScore<T>>,
    pub challenge_scores: Vec<ChallengeScore<T>>,
}

impl<T> ChallengeReport<T> {
    pub fn score_for(&self, model_id: &str) -> Option<&ChallengeScore<T>> {
        self.challenge_scores.iter().find(|s| s.model_id == model_id)
    }
}

fn to_scalar<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("finite f64 converts")
}

/// MASE scale of one series from its context as visible at `t_p`.
pub fn series_scale<T: Scalar>(store: &Store, spec: &ChallengeSpec, series: &SeriesId) -> Result<(Scale<T>, usize), StoreError> {
    let view = store.as_of(series, spec.context_start(), spec.t_p, spec.t_p)?;
    let grid = context_grid(spec.t_p, spec.bucket.frequency, spec.context_length);
    let context: Vec<Option<T>> = align_to_grid(&grid, &view.points)
        .into_iter()
        .map(|v| v.map(to_scalar))
        .collect();
    let m = seasonal_period(spec.bucket.frequency);
    Ok(match mase_scale_with_fallback(&context, m) {
        Ok(found) => found,
        Err(_) => (Scale::Degenerate, 1),
    })
}

/// Horizon actuals of one series as visible at `tx`.
pub fn horizon_actuals<T: Scalar>(store: &Store, spec: &ChallengeSpec, series: &SeriesId, tx: Timestamp) -> Result<Vec<Option<T>>, StoreError> {
    let grid = spec.horizon_grid();
    let view = store.as_of(series, grid[0], *grid.last().expect("h >= 1"), tx)?;
    Ok(align_to_grid(&grid, &view.points)
        .into_iter()
        .map(|v| v.map(to_scalar))
        .collect())
}

/// Scores every submission of one challenge. Pure: all inputs are explicit.
#[allow(clippy::too_many_arguments)]
pub fn score_challenge<T: Scalar>(
    spec: &ChallengeSpec,
    submissions: &[&ForecastSubmission],
    scales: &[SeriesScale<T>],
    actuals: &BTreeMap<String, Vec<Option<T>>>,
    finalize: bool,
    config: &EvaluationConfig,
    evaluated_at: Timestamp,
    actuals_as_of: Timestamp,
) -> ChallengeReport<T> {
    let h = spec.horizon_steps;
    let floor = (config.coverage_floor * h as f64).ceil() as usize;
    let by_alias: HashMap<&str, &SeriesScale<T>> = scales.iter().map(|s| (s.alias.as_str(), s)).collect();
    let mut series_scores = Vec::new();
    let mut per_model: BTreeMap<&str, (Vec<T>, usize)> = BTreeMap::new();
    let mut ordered: Vec<&&ForecastSubmission> = submissions.iter().collect();
    ordered.sort_by(|a, b| (&a.model_id, &a.series_alias).cmp(&(&b.model_id, &b.series_alias)));
    for sub in ordered {
        let Some(scale) = by_alias.get(sub.series_alias.as_str()) else {
            continue;
        };
        let entry = per_model.entry(&sub.model_id).or_insert((Vec::new(), 0));
        entry.1 += 1;
        let missing = vec![None; h];
        let acts = actuals.get(&sub.series_alias).unwrap_or(&missing);
        let mut acc = MaseAccumulator::new(sub.values.iter().map(|v| to_scalar(*v)).collect(), scale.scale);
        for (i, a) in acts.iter().enumerate() {
            if let Some(a) = a {
                acc.observe(i, *a);
            }
        }
        let observed = acc.steps_observed();
        let value = acc.value();
        let (status, void_reason) = match (scale.scale, value) {
            (Scale::Degenerate, _) => (ScoreStatus::Void, Some(VoidReason::DegenerateScale)),
            (_, None) if finalize => (ScoreStatus::Void, Some(VoidReason::NoActuals)),
            _ if finalize && observed < floor => (ScoreStatus::Void, Some(VoidReason::LowCoverage)),
            _ if finalize => (ScoreStatus::Final, None),
            _ => (ScoreStatus::Partial, None),
        };
        if status != ScoreStatus::Void {
            if let Some(v) = value {
                entry.0.push(v);
            }
        }
        series_scores.push(SeriesScore {
            challenge_id: spec.challenge_id.clone(),
            model_id: sub.model_id.clone(),
            alias: sub.series_alias.clone(),
            series: scale.series.clone(),
            mase: if status == ScoreStatus::Void { None } else { value },
            steps_observed: observed,
            horizon_steps: h,
            status,
            void_reason,
        });
    }
    let challenge_scores = per_model
        .into_iter()
        .filter_map(|(model, (values, submitted))| {
            Some(ChallengeScore {
                challenge_id: spec.challenge_id.clone(),
                model_id: model.to_string(),
                aggregate_mase: mean(&values)?,
                series_scored: values.len(),
                series_submitted: submitted,
            })
        })
        .collect();
    ChallengeReport {
        challenge_id: spec.challenge_id.clone(),
        bucket: spec.bucket.clone(),
        t_p: spec.t_p,
        status: if finalize { ScoreStatus::Final } else { ScoreStatus::Partial },
        evaluated_at,
        actuals_as_of,
        degenerate: scales
            .iter()
            .filter(|s| s.scale == Scale::Degenerate)
            .map(|s| s.alias.clone())
            .collect(),
        scales: scales.to_vec(),
        actuals: if finalize { actuals.clone() } else { BTreeMap::new() },
        series_scores,
        challenge_scores,
    }
}

/// Stateful evaluator: caches per-challenge scales, keeps the latest partial
/// report and the frozen final report.
#[derive(Debug, Default)]
pub struct Evaluator {
    config: EvaluationConfig,
    scales: HashMap<String, Vec<SeriesScale<f64>>>,
    partial: HashMap<String, ChallengeReport<f64>>,
    finalized: BTreeMap<String, ChallengeReport<f64>>,
}

impl Evaluator {
    pub fn new(config: EvaluationConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    pub fn config(&self) -> &EvaluationConfig {
        &self.config
    }

    fn scales(&mut self, challenge: &Challenge, store: &Store) -> Result<Vec<SeriesScale<f64>>, StoreError> {
        if let Some(s) = self.scales.get(challenge.id()) {
            return Ok(s.clone());
        }
        let mut out = Vec::with_capacity(challenge.aliases.len());
        for a in &challenge.aliases {
            let (scale, period) = series_scale(store, &challenge.spec, &a.true_series)?;
            out.push(SeriesScale {
                alias: a.alias.clone(),
                series: a.true_series.clone(),
                scale,
                period,
            });
        }
        self.scales.insert(challenge.id().to_string(), out.clone());
        Ok(out)
    }

    fn actuals(challenge: &Challenge, store: &Store, tx: Timestamp) -> Result<BTreeMap<String, Vec<Option<f64>>>, StoreError> {
        challenge
            .aliases
            .iter()
            .map(|a| Ok((a.alias.clone(), horizon_actuals(store, &challenge.spec, &a.true_series, tx)?)))
            .collect()
    }

    /// Recomputes the running score of an active challenge.
    pub fn update_partial(
        &mut self,
        challenge: &Challenge,
        submissions: &[&ForecastSubmission],
        store: &Store,
        now: Timestamp,
    ) -> Result<&ChallengeReport<f64>, EvaluationError> {
        let scales = self.scales(challenge, store)?;
        let actuals = Self::actuals(challenge, store, now)?;
        let report = score_challenge(&challenge.spec, submissions, &scales, &actuals, false, &self.config, now, now);
        self.partial.insert(challenge.id().to_string(), report);
        Ok(&self.partial[challenge.id()])
    }

    /// Freezes the final score of a closed challenge. Calling it again
    /// returns the stored report unchanged.
    pub fn finalize(
        &mut self,
        challenge: &Challenge,
        submissions: &[&ForecastSubmission],
        store: &Store,
        now: Timestamp,
    ) -> Result<&ChallengeReport<f64>, EvaluationError> {
        if self.finalized.contains_key(challenge.id()) {
            return Ok(&self.finalized[challenge.id()]);
        }
        let closed_at = match (challenge.stage, challenge.closed_at) {
            (Stage::Closed, Some(t)) => t,
            _ => return Err(EvaluationError::NotClosed(challenge.id().to_string())),
        };
        let scales = self.scales(challenge, store)?;
        let actuals = Self::actuals(challenge, store, closed_at)?;
        let report = score_challenge(&challenge.spec, submissions, &scales, &actuals, true, &self.config, now, closed_at);
        self.partial.remove(challenge.id());
        self.finalized.insert(challenge.id().to_string(), report);
        Ok(&self.finalized[challenge.id()])
    }

    /// Installs a final report read back from the journal.
    pub fn restore_final(&mut self, report: ChallengeReport<f64>) {
        self.partial.remove(&report.challenge_id);
        self.finalized.entry(report.challenge_id.clone()).or_insert(report);
    }

    pub fn is_final(&self, challenge_id: &str) -> bool {
        self.finalized.contains_key(challenge_id)
    }

    /// Final report if frozen, otherwise the latest partial one.
    pub fn report(&self, challenge_id: &str) -> Option<&ChallengeReport<f64>> {
        self.finalized.get(challenge_id).or_else(|| self.partial.get(challenge_id))
    }

    pub fn final_reports(&self) -> impl Iterator<Item = &ChallengeReport<f64>> {
        self.finalized.values()
    }
}
