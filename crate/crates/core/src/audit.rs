//! Post-hoc leakage audit over the platform journal.

use serde::{Deserialize, Serialize};

use crate::journal::PlatformEvent;
use crate::platform::Platform;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageViolation {
    pub seq: u64,
    pub challenge_id: String,
    pub detail: String,
}

/// Re-checks every served context and accepted submission against the store:
///
/// * no context point has an event time after `t_p`;
/// * every context point is backed by a version created no later than the
///   serving instant and still current at that instant;
/// * no context was served and no submission accepted after `t_p`.
pub fn check_leakage(platform: &Platform) -> Vec<LeakageViolation> {
    let mut out = Vec::new();
    let orchestrator = platform.orchestrator();
    for entry in platform.journal() {
        let mut flag = |challenge_id: &str, detail: String| {
            out.push(LeakageViolation {
                seq: entry.seq,
                challenge_id: challenge_id.to_string(),
                detail,
            })
        };
        match &entry.event {
            PlatformEvent::ContextServed { payload, .. } => {
                let Ok(ch) = orchestrator.get(&payload.challenge_id) else {
                    flag(&payload.challenge_id, "context for unknown challenge".into());
                    continue;
                };
                let t_p = ch.spec.t_p;
                if payload.served_at > t_p || entry.at != payload.served_at {
                    flag(&payload.challenge_id, format!("context served at {} (t_p {t_p})", payload.served_at));
                }
                if let Some((t, _)) = payload.points.iter().find(|(t, _)| *t > t_p) {
                    flag(&payload.challenge_id, format!("context point at {t} after t_p {t_p}"));
                }
                let Some(alias) = ch.alias(&payload.series_alias) else {
                    flag(&payload.challenge_id, format!("unknown alias {}", payload.series_alias));
                    continue;
                };
                let store = platform.store();
                for (t, v) in &payload.points {
                    let served = payload.served_at;
                    let backed = store.history(&alias.true_series, *t).into_iter().any(|row| {
                        row.value.to_bits() == v.to_bits()
                            && row.valid_from <= served
                            && row.valid_to.is_none_or(|to| to >= served)
                    });
                    if !backed {
                        flag(&payload.challenge_id, format!("point {t} not backed by a version visible at {served}"));
                    }
                }
            }
            PlatformEvent::SubmissionAccepted { submission, .. } => match orchestrator.get(&submission.challenge_id) {
                Ok(ch) if submission.received_at <= ch.spec.t_p && entry.at == submission.received_at => {}
                Ok(ch) => flag(
                    &submission.challenge_id,
                    format!("submission received at {} accepted (t_p {})", submission.received_at, ch.spec.t_p),
                ),
                Err(_) => flag(&submission.challenge_id, "submission for unknown challenge".into()),
            },
            _ => {}
        }
    }
    out
}
