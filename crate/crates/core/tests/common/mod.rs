#![allow(dead_code)]

use std::sync::Arc;

use arena_core::audit::check_leakage;
use arena_core::clock::{Clock, VirtualClock};
use arena_core::config::{build_ingestion, ProviderConfig, SeriesGroup};
use arena_core::domain::{Frequency, IsoDuration, SeriesId, Timestamp};
use arena_core::gateway::{ArenaApi, ChallengeFilter, RegisterModelRequest, SubmitRequest};
use arena_core::orchestrator::{BucketSchedule, ScheduleConfig, SelectionConfig, Stage};
use arena_core::platform::{Platform, PlatformConfig};
use arena_core::store::{Provenance, Store};
use chrono::{TimeDelta, TimeZone, Utc};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn t0() -> Timestamp {
    Utc.with_ymd_and_hms(2025, 3, 1, 0, 0, 0).unwrap()
}

// ---------------------------------------------------------------------------
// Bitemporal replay oracle: the value visible at tx is the last write to the
// key with write time <= tx. Nothing else is modelled.

#[derive(Debug, Clone, Copy)]
pub struct Op {
    pub series: usize,
    pub event_hour: i64,
    pub value: f64,
    pub tx_minute: i64,
}

pub fn series_id(i: usize) -> SeriesId {
    SeriesId::new("oracle", format!("s{i}"))
}

pub fn event_time(hour: i64) -> Timestamp {
    t0() + TimeDelta::hours(hour)
}

pub fn tx_time(minute: i64) -> Timestamp {
    t0() + TimeDelta::minutes(minute)
}

pub fn random_schedule(rng: &mut ChaCha8Rng) -> Vec<Op> {
    let n = rng.random_range(1..60);
    let mut tx = 0;
    (0..n)
        .map(|_| {
            tx += rng.random_range(1..30);
            Op {
                series: rng.random_range(0..3),
                event_hour: rng.random_range(0..8),
                // A small value set makes repeated writes (no-ops) common.
                value: [1.0, 2.5, -3.25, 1e-7, 42.0][rng.random_range(0..5)],
                tx_minute: tx,
            }
        })
        .collect()
}

pub fn oracle_value(ops: &[Op], series: usize, hour: i64, tx_minute: i64) -> Option<f64> {
    ops.iter()
        .rfind(|o| o.series == series && o.event_hour == hour && o.tx_minute <= tx_minute)
        .map(|o| o.value)
}

pub fn apply_schedule(store: &mut Store, ops: &[Op]) {
    for i in 0..3 {
        store.register_series(&series_id(i));
    }
    for o in ops {
        store
            .upsert_at(
                &series_id(o.series),
                event_time(o.event_hour),
                o.value,
                Provenance::new("oracle", "schedule", tx_time(o.tx_minute)),
                tx_time(o.tx_minute),
            )
            .expect("schedule is monotone in tx");
    }
}

/// Compares every key at every transaction time around each write.
pub fn compare_with_oracle(store: &Store, ops: &[Op]) -> Result<usize, String> {
    let last = ops.last().map(|o| o.tx_minute).unwrap_or(0) + 2;
    let mut probes: Vec<i64> = ops.iter().flat_map(|o| [o.tx_minute - 1, o.tx_minute]).collect();
    probes.extend([0, last]);
    let mut checked = 0;
    for &tx in &probes {
        for s in 0..3 {
            let view = store
                .as_of(&series_id(s), event_time(0), event_time(7), tx_time(tx))
                .map_err(|e| e.to_string())?;
            for hour in 0..8 {
                let expected = oracle_value(ops, s, hour, tx);
                let got = view.points.iter().find(|(t, _)| *t == event_time(hour)).map(|(_, v)| *v);
                if expected.map(f64::to_bits) != got.map(f64::to_bits) {
                    return Err(format!("s{s} h{hour} tx{tx}: expected {expected:?}, got {got:?}"));
                }
                checked += 1;
            }
        }
    }
    for s in 0..3 {
        for hour in 0..8 {
            let chain = store.history(&series_id(s), event_time(hour));
            for w in chain.windows(2) {
                if w[0].valid_to != Some(w[1].valid_from) {
                    return Err(format!("s{s} h{hour}: versions not contiguous"));
                }
            }
            for v in &chain {
                if v.valid_to.is_some_and(|to| to <= v.valid_from) {
                    return Err(format!("s{s} h{hour}: empty validity interval"));
                }
            }
            if chain.iter().filter(|v| v.valid_to.is_none()).count() > 1 {
                return Err(format!("s{s} h{hour}: more than one open version"));
            }
            let mut changes = 0;
            let mut prev: Option<f64> = None;
            for o in ops.iter().filter(|o| o.series == s && o.event_hour == hour) {
                if prev.map(f64::to_bits) != Some(o.value.to_bits()) {
                    changes += 1;
                    prev = Some(o.value);
                }
            }
            if chain.len() != changes {
                return Err(format!("s{s} h{hour}: {} versions for {changes} distinct writes", chain.len()));
            }
        }
    }
    Ok(checked)
}

// ---------------------------------------------------------------------------
// Exact MASE oracle over rationals. Inputs are integers in thousandths.

pub type Q = Ratio<i128>;

pub fn q(milli: i64) -> Q {
    Q::new(milli as i128, 1000)
}

pub fn mase_oracle(context: &[Option<i64>], forecast: &[i64], actuals: &[Option<i64>], m: usize) -> Option<Q> {
    let mut den_sum = Q::from_integer(0);
    let mut den_n = 0i128;
    for t in m..context.len() {
        if let (Some(a), Some(b)) = (context[t], context[t - m]) {
            let d = q(a) - q(b);
            den_sum += if d < Q::from_integer(0) { -d } else { d };
            den_n += 1;
        }
    }
    if den_n == 0 || den_sum == Q::from_integer(0) {
        return None;
    }
    let mut num_sum = Q::from_integer(0);
    let mut num_n = 0i128;
    for (f, a) in forecast.iter().zip(actuals) {
        if let Some(a) = a {
            let d = q(*f) - q(*a);
            num_sum += if d < Q::from_integer(0) { -d } else { d };
            num_n += 1;
        }
    }
    if num_n == 0 {
        return None;
    }
    Some((num_sum / Q::from_integer(num_n)) / (den_sum / Q::from_integer(den_n)))
}

pub fn q_to_f64(v: Q) -> f64 {
    *v.numer() as f64 / *v.denom() as f64
}

// ---------------------------------------------------------------------------
// Small platform used by the leakage fuzz and finalization checks.

pub struct Mini {
    pub clock: Arc<VirtualClock>,
    pub platform: Platform,
}

pub fn mini_platform(rng: &mut ChaCha8Rng, horizon_hours: i64) -> Mini {
    let clock = Arc::new(VirtualClock::stepped(t0()));
    let delays = [0, 10, 45, 120];
    let group = SeriesGroup {
        prefix: "load".into(),
        count: 4,
        domain: "energy".into(),
        subdomain: "load".into(),
        frequency: Frequency::hours(1),
        timezone: "Europe/Berlin".into(),
        base: 100.0,
        amplitude: 20.0,
        period: 24,
        trend: 0.0,
        noise_std: 2.0,
        spread: 0.3,
        emission_delay: IsoDuration::minutes(delays[rng.random_range(0..4)]),
        correction_rate: rng.random_range(0.0..0.5),
        correction_offset: 3.0,
        correction_delay: IsoDuration::minutes(rng.random_range(20..200)),
    };
    let provider = ProviderConfig {
        name: "grid".into(),
        pull_interval: IsoDuration::hours(rng.random_range(1..3)),
        rate_limit: arena_core::ratelimit::RateLimit::per_minute(600),
        lookback: Some(IsoDuration::hours(8)),
        series_group: vec![group],
        fixture: None,
    };
    let ingestion = build_ingestion(&[provider], t0() - TimeDelta::days(4), rng.random(), std::path::Path::new(".")).unwrap();
    let schedule = ScheduleConfig {
        buckets: vec![BucketSchedule {
            domain: "energy".into(),
            frequency: Frequency::hours(1),
            horizon: IsoDuration::hours(horizon_hours),
            cadence_per_day: 1,
            phase_offset: IsoDuration::hours(12),
            context_length: 48,
            registration_window: IsoDuration::hours(1),
            announce_lead: IsoDuration::hours(6),
            grace: None,
            selection: SelectionConfig::Random { k: 2, seed: rng.random() },
        }],
    };
    let mut config = PlatformConfig::new("fuzz-secret", "fuzz-operator");
    config.plan_until = Some(t0() + TimeDelta::days(1));
    config.api_rate_limit = arena_core::ratelimit::RateLimit::per_minute(10_000);
    let mut platform = Platform::new(config, schedule, ingestion, clock.clone()).unwrap();
    platform.backfill(TimeDelta::days(2)).unwrap();
    platform.tick().unwrap();
    Mini { clock, platform }
}

impl Mini {
    pub fn tick_until(&mut self, t: Timestamp, step: TimeDelta) {
        while self.clock.now() < t {
            let next = (self.clock.now() + step).min(t);
            self.clock.advance_to(next);
            self.platform.tick().unwrap();
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FuzzStats {
    pub contexts: usize,
    pub accepted: usize,
    pub rejected: usize,
}

/// One randomized interleaving of ingestion ticks, context reads and
/// submissions around a cut-off. Returns an error on any leakage.
pub fn leakage_case(seed: u64) -> Result<FuzzStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mini = mini_platform(&mut rng, 6);
    let keys: Vec<_> = (0..2)
        .map(|i| {
            mini.platform
                .register_model(RegisterModelRequest::new(&format!("fuzz-{i}"), "random", "0", false))
                .unwrap()
        })
        .collect();
    let ch = mini.platform.list_challenges(&ChallengeFilter::default()).unwrap().remove(0);
    let t_p = ch.t_p;
    mini.tick_until(t_p - TimeDelta::minutes(100), TimeDelta::hours(1));

    #[derive(Clone, Copy)]
    enum Action {
        Tick,
        Context(usize, usize),
        Submit(usize, usize),
    }
    let mut events: Vec<(Timestamp, Action)> = Vec::new();
    let lo = t_p - TimeDelta::minutes(90);
    for _ in 0..rng.random_range(10..40) {
        let at = match rng.random_range(0..10) {
            0 => t_p,
            1 => t_p + TimeDelta::seconds(1),
            2 => t_p - TimeDelta::seconds(1),
            3 => ch.registration_open_at,
            _ => lo + TimeDelta::seconds(rng.random_range(0..150 * 60)),
        };
        let action = match rng.random_range(0..3) {
            0 => Action::Tick,
            1 => Action::Context(rng.random_range(0..2), rng.random_range(0..2)),
            _ => Action::Submit(rng.random_range(0..2), rng.random_range(0..2)),
        };
        events.push((at, action));
    }
    events.sort_by_key(|(at, _)| *at);
    let mut stats = FuzzStats::default();
    for (at, action) in events {
        mini.clock.advance_to(at);
        let now = mini.clock.now();
        match action {
            Action::Tick => {
                mini.platform.tick().unwrap();
            }
            Action::Context(m, s) => {
                let res = mini.platform.get_context(&keys[m].api_key, &ch.challenge_id, &ch.series[s].alias);
                let open = now >= ch.registration_open_at && now <= t_p;
                match (res, open) {
                    (Ok(ctx), true) => {
                        if ctx.points.iter().any(|(t, _)| *t > t_p) {
                            return Err(format!("seed {seed}: context beyond t_p"));
                        }
                        stats.contexts += 1;
                    }
                    (Err(_), false) => {}
                    (Ok(_), false) => return Err(format!("seed {seed}: context served at {now} outside registration")),
                    (Err(e), true) => return Err(format!("seed {seed}: context refused in registration: {e}")),
                }
            }
            Action::Submit(m, s) => {
                let res = mini.platform.submit_forecast(
                    &keys[m].api_key,
                    &ch.challenge_id,
                    SubmitRequest {
                        alias: ch.series[s].alias.clone(),
                        model_id: keys[m].card.model_id.clone(),
                        values: vec![1.0; ch.horizon_steps],
                        client_submit_time: Some(t_p - TimeDelta::hours(5)),
                        external_data_used: false,
                    },
                );
                let open = now >= ch.registration_open_at && now <= t_p;
                match (res, open) {
                    (Ok(r), true) if r.received_at == now => stats.accepted += 1,
                    (Err(_), false) => stats.rejected += 1,
                    (r, _) => return Err(format!("seed {seed}: submission at {now} (t_p {t_p}) gave {r:?}")),
                }
            }
        }
    }
    mini.tick_until(t_p + TimeDelta::hours(10), TimeDelta::minutes(30));
    let stage = mini.platform.orchestrator().get(&ch.challenge_id).unwrap().stage;
    if stage != Stage::Closed {
        return Err(format!("seed {seed}: challenge not closed"));
    }
    let violations = check_leakage(&mini.platform);
    if let Some(v) = violations.first() {
        return Err(format!("seed {seed}: {} violations, first: {}", violations.len(), v.detail));
    }
    Ok(stats)
}
