//! Clock injection seam. Every component reads time through [`Clock`] so the
//! same code runs against wall-clock time or a simulated one.

use std::sync::Arc;
use std::time::Instant;

use chrono::{TimeDelta, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::domain::Timestamp;

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

/// Wall clock.
#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Utc::now()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "factor")]
pub enum ClockMode {
    Realtime,
    Accelerated(f64),
    Stepped,
}

#[derive(Debug)]
struct ClockState {
    now: Timestamp,
    // Real instant corresponding to `now`; used by the time-driven modes.
    anchor: Instant,
}

/// Simulated clock. Never moves backwards.
#[derive(Debug, Clone)]
pub struct VirtualClock {
    mode: ClockMode,
    state: Arc<Mutex<ClockState>>,
}

impl VirtualClock {
    pub fn new(start: Timestamp, mode: ClockMode) -> Self {
        Self {
            mode,
            state: Arc::new(Mutex::new(ClockState {
                now: start,
                anchor: Instant::now(),
            })),
        }
    }

    pub fn stepped(start: Timestamp) -> Self {
        Self::new(start, ClockMode::Stepped)
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    /// Moves time forward by `by`. Negative deltas are ignored.
    pub fn advance(&self, by: TimeDelta) {
        if by <= TimeDelta::zero() {
            return;
        }
        let mut st = self.state.lock();
        st.now += by;
    }

    /// Jumps to `t` if it lies in the future.
    pub fn advance_to(&self, t: Timestamp) {
        let mut st = self.state.lock();
        if t > st.now {
            st.now = t;
        }
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Timestamp {
        let mut st = self.state.lock();
        let factor = match self.mode {
            ClockMode::Stepped => return st.now,
            ClockMode::Realtime => 1.0,
            ClockMode::Accelerated(f) => f,
        };
        let real = st.anchor.elapsed();
        let scaled = TimeDelta::from_std(real.mul_f64(factor)).unwrap_or(TimeDelta::MAX);
        if scaled > TimeDelta::zero() {
            st.now += scaled;
            st.anchor = Instant::now();
        }
        st.now
    }
}

impl<C: Clock + ?Sized> Clock for Arc<C> {
    fn now(&self) -> Timestamp {
        (**self).now()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn stepped_clock_only_moves_on_advance() {
        let t0 = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
        let clock = VirtualClock::stepped(t0);
        assert_eq!(clock.now(), t0);
        clock.advance(TimeDelta::minutes(5));
        assert_eq!(clock.now(), t0 + TimeDelta::minutes(5));
        clock.advance(TimeDelta::minutes(-10));
        clock.advance_to(t0);
        assert_eq!(clock.now(), t0 + TimeDelta::minutes(5));
    }

    #[test]
    fn accelerated_clock_is_monotone() {
        let t0 = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
        let clock = VirtualClock::new(t0, ClockMode::Accelerated(1000.0));
        let a = clock.now();
        std::thread::sleep(std::time::Duration::from_millis(5));
        let b = clock.now();
        assert!(b > a);
    }
}
