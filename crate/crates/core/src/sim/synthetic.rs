//! Analytic synthetic series: level + trend + sinusoidal season + noise,
//! with optional late corrections. Every value is a pure function of the
//! spec and the event time.

use std::f64::consts::TAU;

use chrono::TimeDelta;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{IsoDuration, SeriesInfo, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntheticError {
    #[error("{0} is not on the series grid")]
    OffGrid(Timestamp),
    #[error("invalid synthetic spec: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSeriesSpec {
    pub series: SeriesInfo,
    /// Grid anchor; step index 0.
    pub epoch: Timestamp,
    pub base: f64,
    pub trend: f64,
    pub amplitude: f64,
    /// Seasonal period in steps.
    pub period: usize,
    /// Phase shift in steps.
    #[serde(default)]
    pub phase: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub emission_delay: IsoDuration,
    #[serde(default)]
    pub correction_rate: f64,
    #[serde(default)]
    pub correction_offset: f64,
    #[serde(default = "zero_duration")]
    pub correction_delay: IsoDuration,
}

fn zero_duration() -> IsoDuration {
    IsoDuration::seconds(0)
}

const NOISE_STREAM: u64 = 0x6e6f_6973_6500_0001;
const CORRECTION_STREAM: u64 = 0x636f_7272_0000_0002;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn substream(seed: u64, stream: u64, step: i64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(stream ^ step as u64)))
}

impl SyntheticSeriesSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        if self.period == 0 {
            return Err(SyntheticError::Invalid("period must be >= 1"));
        }
        if self.noise_std.is_nan() || self.noise_std < 0.0 {
            return Err(SyntheticError::Invalid("noise std must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.correction_rate) {
            return Err(SyntheticError::Invalid("correction rate must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Step index of `event_time` relative to the epoch.
    pub fn step_index(&self, event_time: Timestamp) -> Result<i64, SyntheticError> {
        let step = self.series.native_frequency.step().num_seconds();
        let offset = (event_time - self.epoch).num_seconds();
        if offset % step != 0 || event_time.timestamp_subsec_nanos() != 0 {
            return Err(SyntheticError::OffGrid(event_time));
        }
        Ok(offset / step)
    }

    fn noise_free(&self, steps: i64) -> f64 {
        let pos = (steps + self.phase as i64).rem_euclid(self.period as i64) as f64;
        self.base + self.trend * steps as f64 + self.amplitude * (TAU * pos / self.period as f64).sin()
    }

    /// Initial (uncorrected) value at `event_time`.
    pub fn generate(&self, event_time: Timestamp) -> Result<f64, SyntheticError> {
        let steps = self.step_index(event_time)?;
        let mut v = self.noise_free(steps);
        if self.noise_std > 0.0 {
            let z: f64 = substream(self.seed, NOISE_STREAM, steps).sample(StandardNormal);
            v += self.noise_std * z;
        }
        Ok(v)
    }

    /// Whether the point at `event_time` gets revised later.
    pub fn is_corrected(&self, event_time: Timestamp) -> Result<bool, SyntheticError> {
        let steps = self.step_index(event_time)?;
        if self.correction_rate <= 0.0 {
            return Ok(false);
        }
        let u: f64 = substream(self.seed, CORRECTION_STREAM, steps).random();
        Ok(u < self.correction_rate)
    }

    /// First instant at which the point is published.
    pub fn available_at(&self, event_time: Timestamp) -> Timestamp {
        event_time + self.emission_delay.delta()
    }

    /// The value a provider would publish for `event_time` when asked at
    /// `pull_time`, or `None` if not yet published.
    pub fn published(&self, event_time: Timestamp, pull_time: Timestamp) -> Result<Option<f64>, SyntheticError> {
        let v = self.generate(event_time)?;
        let available = self.available_at(event_time);
        if pull_time < available {
            return Ok(None);
        }
        if self.is_corrected(event_time)?
            && pull_time >= available + self.correction_delay.delta()
        {
            return Ok(Some(v + self.correction_offset));
        }
        Ok(Some(v))
    }

    /// Grid points in `(start, end]`.
    pub fn grid(&self, start: Timestamp, end: Timestamp) -> Vec<Timestamp> {
        let step = self.series.native_frequency.delta();
        let step_s = step.num_seconds();
        let first_idx = ((start - self.epoch).num_seconds()).div_euclid(step_s) + 1;
        let mut out = Vec::new();
        let mut t = self.epoch + TimeDelta::seconds(first_idx * step_s);
        while t <= end {
            out.push(t);
            t += step;
        }
        out
    }
}
