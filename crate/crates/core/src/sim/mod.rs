//! Deterministic simulation: synthetic data, scenario files and the harness
//! that drives a platform under a stepped virtual clock.

pub mod harness;
pub mod scenario;
pub mod synthetic;

pub use harness::{run_scenario, AssertionResult, ScenarioReport, ScriptOutcome};
pub use scenario::{Assertion, ScenarioSpec, ScriptedParticipant, ScriptedSubmission};
