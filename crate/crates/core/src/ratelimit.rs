//! Sliding-window admission control driven by an external clock.

use std::collections::VecDeque;

use chrono::TimeDelta;
use serde::{Deserialize, Serialize};

use crate::domain::{IsoDuration, Timestamp};

/// `max_requests` per `per`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimit {
    pub max_requests: u32,
    pub per: IsoDuration,
}

impl RateLimit {
    pub fn per_minute(n: u32) -> Self {
        Self {
            max_requests: n,
            per: IsoDuration::minutes(1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RateLimiter {
    limit: RateLimit,
    admitted: VecDeque<Timestamp>,
}

impl RateLimiter {
    pub fn new(limit: RateLimit) -> Self {
        assert!(limit.max_requests > 0, "rate limit must admit at least one request");
        assert!(limit.per.is_positive(), "rate limit window must be positive");
        Self {
            limit,
            admitted: VecDeque::new(),
        }
    }

    pub fn limit(&self) -> RateLimit {
        self.limit
    }

    /// Admits a request at `now` or returns how long to wait.
    pub fn try_acquire(&mut self, now: Timestamp) -> Result<(), TimeDelta> {
        let window = self.limit.per.delta();
        while let Some(&front) = self.admitted.front() {
            if now - front >= window {
                self.admitted.pop_front();
            } else {
                break;
            }
        }
        if self.admitted.len() < self.limit.max_requests as usize {
            self.admitted.push_back(now);
            Ok(())
        } else {
            let oldest = *self.admitted.front().expect("non-empty when full");
            Err(oldest + window - now)
        }
    }
}
