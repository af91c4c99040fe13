use chrono::TimeDelta;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{IsoDuration, Timestamp};

const BACKOFF_BASE_SECS: i64 = 30;

/// Outcome of one scheduled provider poll.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollRecord {
    pub provider: String,
    pub at: Timestamp,
    pub report: Option<super::IngestReport>,
    pub error: Option<String>,
}

/// Per-provider pull timing: fixed cadence with catch-up, and exponential
/// backoff with jitter (capped at the interval) after failures.
#[derive(Debug, Clone)]
pub struct PullSchedule {
    interval: TimeDelta,
    next_due: Option<Timestamp>,
    // Slot the cadence is anchored to; retries do not shift it.
    slot: Option<Timestamp>,
    failures: u32,
    rng: ChaCha8Rng,
}

impl PullSchedule {
    pub fn new(interval: IsoDuration, seed: u64) -> Self {
        Self {
            interval: interval.delta(),
            next_due: None,
            slot: None,
            failures: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_due(&self, now: Timestamp) -> bool {
        self.next_due.is_none_or(|t| now >= t)
    }

    pub fn next_due(&self) -> Option<Timestamp> {
        self.next_due
    }

    pub fn failures(&self) -> u32 {
        self.failures
    }

    fn next_slot_after(&self, now: Timestamp) -> Timestamp {
        let mut slot = self.slot.unwrap_or(now) + self.interval;
        if slot <= now {
            // Clock jumped past one or more slots: realign to the next slot.
            let behind = (now - slot).num_seconds() / self.interval.num_seconds().max(1) + 1;
            slot += self.interval * behind as i32;
        }
        slot
    }

    pub fn on_success(&mut self, now: Timestamp) {
        let next = self.next_slot_after(now);
        self.slot = Some(next);
        self.next_due = Some(next);
        self.failures = 0;
    }

    pub fn on_failure(&mut self, now: Timestamp) {
        if self.slot.is_none() {
            self.slot = Some(now);
        }
        self.failures = self.failures.saturating_add(1);
        let exp = BACKOFF_BASE_SECS.saturating_mul(1i64 << (self.failures - 1).min(20));
        let capped = exp.min(self.interval.num_seconds()).max(1);
        let jitter: f64 = self.rng.random_range(0.5..=1.0);
        let delay = ((capped as f64) * jitter).round().max(1.0) as i64;
        self.next_due = Some(now + TimeDelta::seconds(delay));
    }
}
