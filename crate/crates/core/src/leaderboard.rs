//! Rolling-window leaderboards with participation-adjusted MASE.
//!
//! `adjusted = raw / (coverage_count / n_available)`: a model that skips
//! challenges it could have entered is penalised in proportion.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::TimeDelta;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::domain::{BucketKey, Scope, Timestamp};
use crate::evaluation::ChallengeScore;
use crate::gateway::ModelCard;
use crate::num::{from_usize, mean, Field, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Window {
    Days7,
    Days30,
    Days90,
    Days365,
}

impl Window {
    pub const ALL: [Window; 4] = [Window::Days7, Window::Days30, Window::Days90, Window::Days365];

    pub fn days(self) -> i64 {
        match self {
            Window::Days7 => 7,
            Window::Days30 => 30,
            Window::Days90 => 90,
            Window::Days365 => 365,
        }
    }

    pub fn length(self) -> TimeDelta {
        TimeDelta::days(self.days())
    }

    /// Membership is `closed_at ∈ (now - length, now]`.
    pub fn contains(self, closed_at: Timestamp, now: Timestamp) -> bool {
        closed_at <= now && closed_at > now - self.length()
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}d", self.days())
    }
}

impl FromStr for Window {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "7d" => Ok(Window::Days7),
            "30d" => Ok(Window::Days30),
            "90d" => Ok(Window::Days90),
            "365d" => Ok(Window::Days365),
            other => Err(format!("unknown window `{other}`; expected 7d, 30d, 90d or 365d")),
        }
    }
}

impl Serialize for Window {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Window {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

/// What the leaderboard needs to know about a closed challenge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosedChallenge {
    pub challenge_id: String,
    pub bucket: BucketKey,
    pub registration_open_at: Timestamp,
    pub closed_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry<T = f64> {
    pub rank: usize,
    pub model_id: String,
    pub display_name: String,
    pub raw_mase: T,
    pub adjusted_mase: T,
    pub participation_rate: T,
    pub coverage_count: usize,
    pub n_available: usize,
}

pub fn adjusted_mase<F: Field>(raw: F, coverage_count: usize, n_available: usize) -> F {
    let rate = F::from_usize(coverage_count).expect("count fits") / F::from_usize(n_available).expect("count fits");
    raw / rate
}

fn in_scope<'a>(
    challenges: &'a [ClosedChallenge],
    scope: &'a Scope,
    window: Window,
    now: Timestamp,
) -> impl Iterator<Item = &'a ClosedChallenge> {
    challenges
        .iter()
        .filter(move |c| scope.matches(&c.bucket) && window.contains(c.closed_at, now))
}

/// Closed challenges in scope and window whose registration opened at or
/// after the model was registered.
pub fn availability(model: &ModelCard, scope: &Scope, window: Window, now: Timestamp, challenges: &[ClosedChallenge]) -> usize {
    in_scope(challenges, scope, window, now)
        .filter(|c| c.registration_open_at >= model.registered_at)
        .count()
}

/// Ranks models by adjusted MASE; ties go to higher participation, then to
/// the model id. Models without a scored challenge in the window are omitted.
pub fn compute_leaderboard<T: Scalar>(
    models: &[ModelCard],
    challenges: &[ClosedChallenge],
    scores: &[ChallengeScore<T>],
    scope: &Scope,
    window: Window,
    now: Timestamp,
) -> Vec<LeaderboardEntry<T>> {
    let eligible: BTreeMap<&str, &ClosedChallenge> = in_scope(challenges, scope, window, now)
        .map(|c| (c.challenge_id.as_str(), c))
        .collect();
    let mut by_model: BTreeMap<&str, Vec<&ChallengeScore<T>>> = BTreeMap::new();
    for s in scores {
        if eligible.contains_key(s.challenge_id.as_str()) {
            by_model.entry(&s.model_id).or_default().push(s);
        }
    }
    let mut entries = Vec::new();
    for model in models {
        let Some(scored) = by_model.get(model.model_id.as_str()) else {
            continue;
        };
        let participated: BTreeSet<&str> = scored.iter().map(|s| s.challenge_id.as_str()).collect();
        let available = eligible
            .values()
            .filter(|c| c.registration_open_at >= model.registered_at || participated.contains(c.challenge_id.as_str()))
            .count();
        let n = participated.len();
        let raw = mean(&scored.iter().map(|s| s.aggregate_mase).collect::<Vec<_>>()).expect("non-empty");
        let rate = from_usize::<T>(n) / from_usize::<T>(available);
        entries.push(LeaderboardEntry {
            rank: 0,
            model_id: model.model_id.clone(),
            display_name: model.declared_name_version.clone(),
            raw_mase: raw,
            adjusted_mase: raw / rate,
            participation_rate: rate,
            coverage_count: n,
            n_available: available,
        });
    }
    entries.sort_by(|a, b| {
        a.adjusted_mase
            .partial_cmp(&b.adjusted_mase)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.participation_rate.partial_cmp(&a.participation_rate).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    entries
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Frequency, IsoDuration};
    use crate::gateway::ParticipationMode;
    use chrono::{DateTime, Utc};
    use num_rational::Rational64;

    fn t(s: &str) -> Timestamp {
        s.parse::<DateTime<Utc>>().unwrap()
    }

    fn bucket() -> BucketKey {
        BucketKey::new("energy", Frequency::hours(1), IsoDuration::hours(24))
    }

    fn card(id: &str, at: Timestamp) -> ModelCard {
        ModelCard {
            model_id: id.into(),
            declared_name_version: format!("{id} v1"),
            architecture_class: "test".into(),
            approx_size: "1".into(),
            external_data_used: false,
            mode: ParticipationMode::Byop,
            registered_at: at,
        }
    }

    fn closed(id: &str, closed_at: Timestamp) -> ClosedChallenge {
        ClosedChallenge {
            challenge_id: id.into(),
            bucket: bucket(),
            registration_open_at: closed_at - TimeDelta::days(1),
            closed_at,
        }
    }

    fn score(ch: &str, model: &str, v: f64) -> ChallengeScore<f64> {
        ChallengeScore {
            challenge_id: ch.into(),
            model_id: model.into(),
            aggregate_mase: v,
            series_scored: 1,
            series_submitted: 1,
        }
    }

    #[test]
    fn adjusted_mase_exact_in_rationals() {
        let raw = Rational64::new(4, 5);
        assert_eq!(adjusted_mase(raw, 10, 10), Rational64::new(4, 5));
        assert_eq!(adjusted_mase(raw, 5, 10), Rational64::new(8, 5));
    }

    #[test]
    fn window_parse_and_boundaries() {
        assert_eq!("30d".parse::<Window>().unwrap(), Window::Days30);
        assert!("14d".parse::<Window>().is_err());
        let now = t("2025-03-01T00:00:00Z");
        assert!(Window::Days7.contains(now, now));
        assert!(!Window::Days7.contains(now - TimeDelta::days(7), now));
        assert!(Window::Days7.contains(now - TimeDelta::days(7) + TimeDelta::seconds(1), now));
        assert!(!Window::Days7.contains(now + TimeDelta::seconds(1), now));
    }

    #[test]
    fn skipping_half_doubles_the_score() {
        let now = t("2025-03-01T00:00:00Z");
        let start = now - TimeDelta::days(20);
        let challenges: Vec<_> = (0..10).map(|i| closed(&format!("c{i}"), now - TimeDelta::days(i + 1))).collect();
        let mut scores = Vec::new();
        for (i, c) in challenges.iter().enumerate() {
            scores.push(score(&c.challenge_id, "full", 0.8));
            if i % 2 == 0 {
                scores.push(score(&c.challenge_id, "half", 0.8));
            }
        }
        let models = [card("full", start), card("half", start)];
        let board = compute_leaderboard(&models, &challenges, &scores, &Scope::all(), Window::Days30, now);
        assert_eq!(board[0].model_id, "full");
        assert_eq!(board[0].adjusted_mase, 0.8);
        assert_eq!(board[1].participation_rate, 0.5);
        assert!((board[1].adjusted_mase - 1.6).abs() <= 1e-12);
        assert_eq!(availability(&models[1], &Scope::all(), Window::Days30, now, &challenges), 10);
    }

    #[test]
    fn late_registrants_are_not_charged_for_earlier_challenges() {
        let now = t("2025-03-01T00:00:00Z");
        let challenges: Vec<_> = (0..4).map(|i| closed(&format!("c{i}"), now - TimeDelta::days(i + 1))).collect();
        let late = card("late", now - TimeDelta::hours(60));
        let scores = vec![score("c0", "late", 1.0)];
        assert_eq!(availability(&late, &Scope::all(), Window::Days7, now, &challenges), 1);
        let board = compute_leaderboard(&[late], &challenges, &scores, &Scope::all(), Window::Days7, now);
        assert_eq!(board[0].participation_rate, 1.0);
    }

    #[test]
    fn ties_break_on_participation_then_id() {
        let now = t("2025-03-01T00:00:00Z");
        let start = now - TimeDelta::days(30);
        let challenges: Vec<_> = (0..2).map(|i| closed(&format!("c{i}"), now - TimeDelta::days(i + 1))).collect();
        let scores = vec![
            score("c0", "b", 1.0),
            score("c1", "b", 1.0),
            score("c0", "a", 1.0),
            score("c1", "a", 1.0),
            score("c0", "z", 0.5),
        ];
        let models = [card("z", start), card("b", start), card("a", start)];
        let board = compute_leaderboard(&models, &challenges, &scores, &Scope::all(), Window::Days30, now);
        let ids: Vec<_> = board.iter().map(|e| e.model_id.as_str()).collect();
        // z: 0.5 / 0.5 = 1.0 ties with a and b but participates less.
        assert_eq!(ids, ["a", "b", "z"]);
        assert_eq!(board.iter().map(|e| e.rank).collect::<Vec<_>>(), [1, 2, 3]);
    }

    #[test]
    fn scope_filters_buckets() {
        let now = t("2025-03-01T00:00:00Z");
        let mut other = closed("x", now - TimeDelta::days(1));
        other.bucket.domain = "weather".into();
        let challenges = vec![closed("c", now - TimeDelta::days(1)), other];
        let scores = vec![score("c", "m", 1.0), score("x", "m", 3.0)];
        let models = [card("m", now - TimeDelta::days(10))];
        let scope = Scope {
            domain: Some("weather".into()),
            ..Scope::default()
        };
        let board = compute_leaderboard(&models, &challenges, &scores, &scope, Window::Days7, now);
        assert_eq!(board[0].raw_mase, 3.0);
        assert_eq!(board[0].n_available, 1);
    }
}
