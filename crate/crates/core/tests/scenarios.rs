use std::path::PathBuf;

use arena_core::sim::{run_scenario, ScenarioSpec};

fn scenario(name: &str) -> ScenarioSpec {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    ScenarioSpec::load(path).unwrap()
}

#[test]
fn late_submission_scenario_passes_its_assertions() {
    let report = run_scenario(&scenario("late-submission.toml")).unwrap();
    for a in &report.assertions {
        assert!(a.passed, "{:?}: {}", a.assertion, a.detail);
    }
    let late: Vec<_> = report.scripted.iter().filter(|s| s.participant == "late-bird").collect();
    assert_eq!(late.len(), 4);
    assert!(late.iter().all(|s| s.at == report.challenges[0].t_p + chrono::TimeDelta::minutes(1)));
    assert!(late.iter().all(|s| !s.accepted && s.error.as_deref().is_some_and(|e| e.contains("deadline_passed"))));
}

#[test]
fn two_week_scenario_passes_its_assertions() {
    let report = run_scenario(&scenario("two-week-energy.toml")).unwrap();
    for a in &report.assertions {
        assert!(a.passed, "{:?}: {}", a.assertion, a.detail);
    }
    assert_eq!(report.challenges_closed, 56);
    assert!(report.leakage_violations.is_empty());
}
