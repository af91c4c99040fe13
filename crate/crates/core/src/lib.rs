//! Live forecasting benchmark core.
//!
//! Forecasts are registered before the target values exist: a challenge
//! serves context up to a cut-off `t_p`, accepts submissions only while the
//! server clock is at or before `t_p`, and scores them once the horizon has
//! been observed. Observations live in an append-only bitemporal store so
//! that every served context and every score can be reproduced as of the
//! instant it was produced.

pub mod audit;
pub mod baselines;
pub mod clock;
pub mod config;
pub mod domain;
pub mod evaluation;
pub mod gateway;
pub mod ingestion;
pub mod journal;
pub mod leaderboard;
pub mod num;
pub mod orchestrator;
pub mod platform;
pub mod ratelimit;
pub mod runtime;
pub mod sim;
pub mod store;

pub use clock::{Clock, ClockMode, SystemClock, VirtualClock};
pub use domain::{BucketKey, Frequency, IsoDuration, Scope, SeriesId, SeriesInfo, Timestamp};
pub use gateway::{ArenaApi, GatewayError};
pub use leaderboard::Window;
pub use platform::{Platform, PlatformConfig, PlatformError};
pub use runtime::Runtime;
pub use store::Store;

pub type SeriesScore = evaluation::SeriesScore<f64>;
pub type ChallengeScore = evaluation::ChallengeScore<f64>;
pub type ChallengeReport = evaluation::ChallengeReport<f64>;
pub type LeaderboardEntry = leaderboard::LeaderboardEntry<f64>;
pub type Scale = evaluation::Scale<f64>;
pub type MaseAccumulator = evaluation::MaseAccumulator<f64>;
