//! Scenario files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, BaselineModel};
use crate::config::{load_toml, ConfigError, ProviderConfig};
use crate::domain::{IsoDuration, Timestamp};
use crate::evaluation::EvaluationConfig;
use crate::leaderboard::Window;
use crate::orchestrator::BucketSchedule;
use crate::ratelimit::RateLimit;

fn quarter_hour() -> IsoDuration {
    IsoDuration::minutes(15)
}

fn two_days() -> IsoDuration {
    IsoDuration::hours(48)
}

fn default_secret() -> String {
    "scenario-secret".into()
}

fn default_operator() -> String {
    "scenario-operator".into()
}

fn default_api_rate_limit() -> RateLimit {
    RateLimit::per_minute(60)
}

fn year() -> Window {
    Window::Days365
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub start: Timestamp,
    /// Challenges are planned for days in `[start, start + duration)`.
    pub duration: IsoDuration,
    /// Extra simulated time for the last challenges to close.
    #[serde(default = "two_days")]
    pub drain: IsoDuration,
    /// History backfilled before the first tick.
    #[serde(default)]
    pub history: Option<IsoDuration>,
    #[serde(default = "quarter_hour")]
    pub tick: IsoDuration,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_secret")]
    pub secret: String,
    #[serde(default = "default_operator")]
    pub operator_key: String,
    #[serde(default = "default_api_rate_limit")]
    pub api_rate_limit: RateLimit,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default, rename = "provider")]
    pub providers: Vec<ProviderConfig>,
    #[serde(default, rename = "bucket")]
    pub buckets: Vec<BucketSchedule>,
    #[serde(default, rename = "baseline")]
    pub baselines: Vec<BaselineConfig>,
    #[serde(default, rename = "participant")]
    pub participants: Vec<ScriptedParticipant>,
    #[serde(default, rename = "assert")]
    pub assertions: Vec<Assertion>,
    /// Directory that relative fixture paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ScenarioSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let mut spec: Self = load_toml(path)?;
        spec.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(spec)
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn end(&self) -> Timestamp {
        self.start + self.duration.delta() + self.drain.delta()
    }
}

/// A participant with a fixed list of submissions relative to each target
/// challenge's cut-off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedParticipant {
    pub name: String,
    #[serde(default, rename = "submission")]
    pub submissions: Vec<ScriptedSubmission>,
}

fn naive() -> BaselineModel {
    BaselineModel::Naive
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedSubmission {
    /// Index into all challenges ordered by cut-off.
    pub challenge: usize,
    /// Submission instant relative to `t_p`; negative is before the cut-off.
    pub offset: IsoDuration,
    #[serde(default = "naive")]
    pub model: BaselineModel,
    /// Series position within the challenge; all series when absent.
    #[serde(default)]
    pub series: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Assertion {
    ClosedChallenges {
        equals: usize,
    },
    ParticipationRate {
        model: String,
        equals: f64,
        #[serde(default = "year")]
        window: Window,
    },
    RawMaseLess {
        model: String,
        than: String,
        #[serde(default = "year")]
        window: Window,
    },
    RawMaseBelow {
        model: String,
        value: f64,
        #[serde(default = "year")]
        window: Window,
    },
    RawMaseAbove {
        model: String,
        value: f64,
        #[serde(default = "year")]
        window: Window,
    },
    AllRejected {
        participant: String,
        reason: String,
    },
    AllAccepted {
        participant: String,
    },
    NoLeakage,
}
