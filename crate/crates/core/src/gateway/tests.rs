use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::{TimeDelta, TimeZone, Utc};

use super::*;
use crate::clock::{Clock, VirtualClock};
use crate::domain::{Frequency, SeriesInfo};
use crate::ingestion::{IngestionService, SyntheticProvider};
use crate::orchestrator::{BucketSchedule, ScheduleConfig, SelectionConfig};
use crate::platform::PlatformConfig;
use crate::sim::synthetic::SyntheticSeriesSpec;

fn start() -> Timestamp {
    Utc.with_ymd_and_hms(2025, 3, 1, 0, 0, 0).unwrap()
}

fn spec(id: &str) -> SyntheticSeriesSpec {
    let seed = id.bytes().map(u64::from).sum();
    SyntheticSeriesSpec {
        series: SeriesInfo {
            id: SeriesId::new("grid", id),
            domain: "energy".into(),
            subdomain: "load".into(),
            native_frequency: Frequency::hours(1),
            display_name: format!("Load {id}"),
            original_timezone: "Europe/Berlin".into(),
        },
        epoch: start() - TimeDelta::days(10),
        base: 100.0,
        trend: 0.0,
        amplitude: 10.0,
        period: 24,
        phase: 0,
        noise_std: 1.0,
        seed,
        emission_delay: IsoDuration::seconds(0),
        correction_rate: 0.0,
        correction_offset: 0.0,
        correction_delay: IsoDuration::seconds(0),
    }
}

struct Fixture {
    clock: Arc<VirtualClock>,
    platform: Platform,
}

fn fixture_in(dir: Option<&std::path::Path>) -> Fixture {
    let clock = Arc::new(VirtualClock::stepped(start()));
    let mut ingestion = IngestionService::new(1);
    let provider = SyntheticProvider::new(
        "grid",
        vec![spec("north"), spec("south"), spec("east")],
        RateLimit::per_minute(600),
        IsoDuration::hours(1),
        Some(IsoDuration::hours(6)),
    )
    .unwrap();
    ingestion.add_provider(Box::new(provider)).unwrap();
    let schedule = ScheduleConfig {
        buckets: vec![BucketSchedule {
            domain: "energy".into(),
            frequency: Frequency::hours(1),
            horizon: IsoDuration::hours(6),
            cadence_per_day: 1,
            phase_offset: IsoDuration::hours(12),
            context_length: 48,
            registration_window: IsoDuration::hours(1),
            announce_lead: IsoDuration::hours(6),
            grace: None,
            selection: SelectionConfig::Random { k: 2, seed: 5 },
        }],
    };
    let mut config = PlatformConfig::new("test-secret", "op-key");
    config.plan_until = Some(start() + TimeDelta::days(1));
    let mut platform = match dir {
        Some(d) => Platform::open(d, config, schedule, ingestion, clock.clone()).unwrap(),
        None => Platform::new(config, schedule, ingestion, clock.clone()).unwrap(),
    };
    platform.backfill(TimeDelta::days(3)).unwrap();
    platform.tick().unwrap();
    Fixture { clock, platform }
}

fn fixture() -> Fixture {
    fixture_in(None)
}

impl Fixture {
    fn advance_to(&mut self, t: Timestamp) {
        while self.clock.now() < t {
            let next = (self.clock.now() + TimeDelta::minutes(15)).min(t);
            self.clock.advance_to(next);
            self.platform.tick().unwrap();
        }
    }

    fn challenge(&mut self) -> ChallengeSummary {
        self.platform.list_challenges(&ChallengeFilter::default()).unwrap().remove(0)
    }

    fn register(&mut self, name: &str) -> Registration {
        self.platform
            .register_model(RegisterModelRequest::new(name, "test", "1", false))
            .unwrap()
    }
}

fn request(reg: &Registration, alias: &str, values: Vec<f64>) -> SubmitRequest {
    SubmitRequest {
        alias: alias.to_string(),
        model_id: reg.card.model_id.clone(),
        values,
        client_submit_time: None,
        external_data_used: false,
    }
}

#[test]
fn registration_requires_every_disclosure() {
    let mut f = fixture();
    let full = RegisterModelRequest::new("m v1", "gbm", "1M", true);
    let cases: [(fn(&mut RegisterModelRequest), &str); 4] = [
        (|r| r.declared_name_version = None, "declared_name_version"),
        (|r| r.architecture_class = Some("  ".into()), "architecture_class"),
        (|r| r.approx_size = None, "approx_size"),
        (|r| r.external_data_used = None, "external_data_used"),
    ];
    for (mutate, field) in cases {
        let mut r = full.clone();
        mutate(&mut r);
        assert_eq!(f.platform.register_model(r), Err(GatewayError::MissingDisclosure(field)));
    }
    let reg = f.platform.register_model(full).unwrap();
    assert_eq!(reg.card.model_id, "m0001");
    assert!(reg.api_key.starts_with("ak_"));
    assert_eq!(f.platform.models().len(), 1);
    assert!(!f.platform.keys.contains_key(&reg.api_key));
}

#[test]
fn random_selection_hides_identities_until_active() {
    let mut f = fixture();
    let ch = f.challenge();
    assert_eq!(ch.stage, Stage::Announced);
    let hidden = serde_json::to_string(&ch).unwrap();
    for secret in ["north", "south", "east", "Load "] {
        assert!(!hidden.contains(secret), "{secret} leaked in {hidden}");
    }
    f.advance_to(ch.t_p - TimeDelta::minutes(30));
    assert_eq!(f.challenge().stage, Stage::Registration);
    assert!(f.challenge().series.iter().all(|s| s.series.is_none()));
    f.advance_to(ch.t_p + TimeDelta::minutes(15));
    let shown = f.challenge();
    assert_eq!(shown.stage, Stage::Active);
    assert!(shown.series.iter().all(|s| s.series.is_some() && s.display_name.is_some()));
    let revealed = f
        .platform
        .journal()
        .iter()
        .any(|e| matches!(&e.event, PlatformEvent::AliasesRevealed { challenge_id, mapping } if *challenge_id == ch.challenge_id && mapping.len() == 2));
    assert!(revealed);
}

#[test]
fn context_is_served_only_during_registration_and_never_past_cutoff() {
    let mut f = fixture();
    let reg = f.register("a");
    let ch = f.challenge();
    let alias = ch.series[0].alias.clone();
    let early = f.platform.get_context(&reg.api_key, &ch.challenge_id, &alias);
    assert!(matches!(early, Err(GatewayError::NotInRegistration { stage: Stage::Announced, .. })));
    assert_eq!(
        f.platform.get_context("ak_wrong", &ch.challenge_id, &alias),
        Err(GatewayError::Unauthorized)
    );
    f.advance_to(ch.registration_open_at);
    let ctx = f.platform.get_context(&reg.api_key, &ch.challenge_id, &alias).unwrap();
    assert_eq!(ctx.served_at, ch.registration_open_at);
    assert!(!ctx.points.is_empty() && ctx.points.len() <= 48);
    assert!(ctx.points.iter().all(|(t, _)| *t <= ch.t_p && *t <= ctx.served_at));
    let first = ch.t_p - TimeDelta::hours(47);
    assert!(ctx.points.iter().all(|(t, _)| *t >= first));
    assert!(matches!(
        f.platform.get_context(&reg.api_key, &ch.challenge_id, "nope"),
        Err(GatewayError::UnknownAlias { .. })
    ));
    f.advance_to(ch.t_p);
    let at_cutoff = f.platform.get_context(&reg.api_key, &ch.challenge_id, &alias).unwrap();
    assert_eq!(at_cutoff.points.last().unwrap().0, ch.t_p);
    f.advance_to(ch.t_p + TimeDelta::seconds(1));
    assert!(matches!(
        f.platform.get_context(&reg.api_key, &ch.challenge_id, &alias),
        Err(GatewayError::NotInRegistration { stage: Stage::Active, .. })
    ));
}

#[test]
fn submission_validation_and_deadline() {
    let mut f = fixture();
    let reg = f.register("a");
    let other = f.register("b");
    let ch = f.challenge();
    let alias = ch.series[0].alias.clone();
    let id = ch.challenge_id.clone();
    f.advance_to(ch.t_p - TimeDelta::minutes(30));
    let p = &mut f.platform;
    assert_eq!(
        p.submit_forecast(&reg.api_key, &id, request(&reg, &alias, vec![1.0; 5])),
        Err(GatewayError::WrongLength { expected: 6, got: 5 })
    );
    let mut nan = vec![1.0; 6];
    nan[3] = f64::NAN;
    assert_eq!(
        p.submit_forecast(&reg.api_key, &id, request(&reg, &alias, nan)),
        Err(GatewayError::NonFiniteValue { index: 3 })
    );
    assert!(matches!(
        p.submit_forecast(&reg.api_key, &id, request(&reg, "zzz", vec![1.0; 6])),
        Err(GatewayError::UnknownAlias { .. })
    ));
    assert_eq!(
        p.submit_forecast(&reg.api_key, &id, request(&other, &alias, vec![1.0; 6])),
        Err(GatewayError::Forbidden(other.card.model_id.clone()))
    );
    assert_eq!(
        p.submit_forecast(&reg.api_key, "missing", request(&reg, &alias, vec![1.0; 6])),
        Err(GatewayError::UnknownChallenge("missing".into()))
    );
    let first = p.submit_forecast(&reg.api_key, &id, request(&reg, &alias, vec![1.0; 6])).unwrap();
    assert!(!first.replaced);
    f.advance_to(ch.t_p);
    let second = f
        .platform
        .submit_forecast(&reg.api_key, &id, request(&reg, &alias, vec![2.0; 6]))
        .unwrap();
    assert!(second.replaced);
    assert_eq!(second.received_at, ch.t_p);
    let kept = f.platform.submissions_for(&id);
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].values, vec![2.0; 6]);
    f.clock.advance(TimeDelta::seconds(1));
    let late = f
        .platform
        .submit_forecast(&other.api_key, &id, request(&other, &alias, vec![3.0; 6]));
    assert_eq!(
        late,
        Err(GatewayError::DeadlinePassed {
            t_p: ch.t_p,
            received_at: ch.t_p + TimeDelta::seconds(1)
        })
    );
    assert_eq!(f.platform.submissions_for(&id).len(), 1);
}

#[test]
fn rate_limit_applies_per_key() {
    let mut f = fixture();
    let reg = f.register("a");
    let other = f.register("b");
    let ch = f.challenge();
    f.advance_to(ch.registration_open_at);
    let alias = ch.series[0].alias.clone();
    for _ in 0..60 {
        f.platform.get_context(&reg.api_key, &ch.challenge_id, &alias).unwrap();
    }
    match f.platform.get_context(&reg.api_key, &ch.challenge_id, &alias) {
        Err(GatewayError::RateLimited { retry_after_secs }) => assert!((1..=60).contains(&retry_after_secs)),
        other => panic!("expected rate limit, got {other:?}"),
    }
    assert!(f.platform.get_context(&other.api_key, &ch.challenge_id, &alias).is_ok());
    f.clock.advance(TimeDelta::seconds(60));
    assert!(f.platform.get_context(&reg.api_key, &ch.challenge_id, &alias).is_ok());
}

#[test]
fn audit_trail_is_operator_only_and_complete() {
    let mut f = fixture();
    let reg = f.register("a");
    let ch = f.challenge();
    let alias = ch.series[0].alias.clone();
    f.advance_to(ch.t_p - TimeDelta::minutes(10));
    f.platform.get_context(&reg.api_key, &ch.challenge_id, &alias).unwrap();
    let mut req = request(&reg, &alias, vec![1.0; 6]);
    req.client_submit_time = Some(ch.t_p - TimeDelta::hours(3));
    f.platform.submit_forecast(&reg.api_key, &ch.challenge_id, req).unwrap();
    f.advance_to(ch.t_p + TimeDelta::minutes(15));
    let late = f
        .platform
        .submit_forecast(&reg.api_key, &ch.challenge_id, request(&reg, &alias, vec![1.0; 6]));
    assert!(late.is_err());
    assert_eq!(f.platform.audit_trail("", &ch.challenge_id).unwrap_err(), GatewayError::OperatorOnly);
    let trail = f.platform.audit_trail("op-key", &ch.challenge_id).unwrap();
    let kinds: Vec<_> = trail
        .events
        .iter()
        .map(|e| match &e.event {
            PlatformEvent::ContextServed { .. } => "context",
            PlatformEvent::SubmissionAccepted { .. } => "accepted",
            PlatformEvent::SubmissionRejected { .. } => "rejected",
            _ => "other",
        })
        .collect();
    assert_eq!(kinds, ["context", "accepted", "rejected"]);
    match &trail.events[1].event {
        PlatformEvent::SubmissionAccepted { submission, .. } => {
            assert_eq!(submission.client_submit_time, Some(ch.t_p - TimeDelta::hours(3)));
            assert_eq!(submission.received_at, ch.t_p - TimeDelta::minutes(10));
        }
        _ => unreachable!(),
    }
    match &trail.events[2].event {
        PlatformEvent::SubmissionRejected { reason, .. } => assert_eq!(reason, "deadline_passed"),
        _ => unreachable!(),
    }
    assert!(trail.aliases.iter().all(|a| a.revealed));
}

#[test]
fn reopening_replays_the_journal() {
    let dir = tempfile::tempdir().unwrap();
    let (id, model, before) = {
        let mut f = fixture_in(Some(dir.path()));
        let reg = f.register("a");
        let ch = f.challenge();
        f.advance_to(ch.t_p - TimeDelta::minutes(5));
        for s in &ch.series {
            f.platform
                .submit_forecast(&reg.api_key, &ch.challenge_id, request(&reg, &s.alias, vec![100.0; 6]))
                .unwrap();
        }
        f.advance_to(ch.t_p + TimeDelta::hours(8));
        let report = f.platform.scores(&ch.challenge_id).unwrap();
        assert_eq!(report.status, crate::evaluation::ScoreStatus::Final);
        (ch.challenge_id, reg.card.model_id, report)
    };
    let clock = Arc::new(VirtualClock::stepped(start() + TimeDelta::days(1)));
    let mut ingestion = IngestionService::new(1);
    ingestion
        .add_provider(Box::new(
            SyntheticProvider::new("grid", vec![spec("north"), spec("south"), spec("east")], RateLimit::per_minute(600), IsoDuration::hours(1), None)
                .unwrap(),
        ))
        .unwrap();
    let schedule = ScheduleConfig { buckets: vec![] };
    let reopened = Platform::open(dir.path(), PlatformConfig::new("test-secret", "op-key"), schedule, ingestion, clock).unwrap();
    assert_eq!(reopened.scores(&id).unwrap(), before);
    assert!(reopened.model(&model).is_some());
    assert_eq!(reopened.submissions_for(&id).len(), 2);
    assert_eq!(reopened.orchestrator().get(&id).unwrap().stage, Stage::Closed);
}

#[test]
fn leakage_audit_flags_forged_context() {
    let mut f = fixture();
    let reg = f.register("a");
    let ch = f.challenge();
    let alias = ch.series[0].alias.clone();
    f.advance_to(ch.registration_open_at);
    let ctx = f.platform.get_context(&reg.api_key, &ch.challenge_id, &alias).unwrap();
    assert!(crate::audit::check_leakage(&f.platform).is_empty());

    let now = f.platform.now();
    let mut altered = ctx.clone();
    altered.points.last_mut().unwrap().1 += 1.0;
    let mut future = ctx.clone();
    future.points.push((ch.t_p + TimeDelta::hours(1), 0.0));
    for payload in [altered, future] {
        let event = PlatformEvent::ContextServed {
            model_id: reg.card.model_id.clone(),
            payload,
        };
        f.platform.record(now, event).unwrap();
    }
    let violations = crate::audit::check_leakage(&f.platform);
    let seqs: BTreeSet<_> = violations.iter().map(|v| v.seq).collect();
    assert_eq!(seqs.len(), 2);
    assert!(violations.iter().any(|v| v.detail.contains("after t_p")));
}
