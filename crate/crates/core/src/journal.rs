//! Append-only platform event journal.
//!
//! Every state change outside the observation store (model registrations,
//! planned challenges, stage changes, served contexts, submissions, final
//! scores) is one entry. The platform state is a fold over the journal, and
//! the per-challenge audit trail is a filtered view of it.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{SeriesId, Timestamp};
use crate::evaluation::ChallengeReport;
use crate::gateway::{ContextPayload, ForecastSubmission, ModelCard};
use crate::orchestrator::{PlannedChallenge, Stage};
use crate::ratelimit::RateLimit;

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal entry {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PlatformEvent {
    ModelRegistered {
        card: ModelCard,
        key_digest: String,
        rate_limit: RateLimit,
    },
    ChallengesPlanned {
        bucket_index: usize,
        day: Timestamp,
        challenges: Vec<PlannedChallenge>,
    },
    StageChanged {
        challenge_id: String,
        from: Stage,
        to: Stage,
        closed_at: Option<Timestamp>,
    },
    AliasesRevealed {
        challenge_id: String,
        mapping: Vec<(String, SeriesId)>,
    },
    ContextServed {
        model_id: String,
        payload: ContextPayload,
    },
    SubmissionAccepted {
        submission: ForecastSubmission,
        replaced: bool,
    },
    SubmissionRejected {
        challenge_id: String,
        series_alias: String,
        model_id: String,
        client_submit_time: Option<Timestamp>,
        received_at: Timestamp,
        reason: String,
    },
    ScoresFinalized {
        report: ChallengeReport,
    },
}

impl PlatformEvent {
    pub fn challenge_id(&self) -> Option<&str> {
        match self {
            PlatformEvent::ModelRegistered { .. } | PlatformEvent::ChallengesPlanned { .. } => None,
            PlatformEvent::StageChanged { challenge_id, .. }
            | PlatformEvent::AliasesRevealed { challenge_id, .. }
            | PlatformEvent::SubmissionRejected { challenge_id, .. } => Some(challenge_id),
            PlatformEvent::ContextServed { payload, .. } => Some(&payload.challenge_id),
            PlatformEvent::SubmissionAccepted { submission, .. } => Some(&submission.challenge_id),
            PlatformEvent::ScoresFinalized { report } => Some(&report.challenge_id),
        }
    }

    /// Events that make up a challenge's audit trail.
    pub fn is_audit_event(&self) -> bool {
        matches!(
            self,
            PlatformEvent::ContextServed { .. }
                | PlatformEvent::SubmissionAccepted { .. }
                | PlatformEvent::SubmissionRejected { .. }
                | PlatformEvent::ScoresFinalized { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    /// Server time at which the event was recorded.
    pub at: Timestamp,
    #[serde(flatten)]
    pub event: PlatformEvent,
}

#[derive(Debug, Default)]
pub struct Journal {
    entries: Vec<JournalEntry>,
    file: Option<(PathBuf, BufWriter<File>)>,
}

impl Journal {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens a durable journal, returning it along with the existing entries.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<JournalEntry>), JournalError> {
        let path = path.as_ref().to_path_buf();
        let mut existing = Vec::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: JournalEntry = serde_json::from_str(&line).map_err(|e| JournalError::Corrupt {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                if entry.seq != existing.len() as u64 {
                    return Err(JournalError::Corrupt {
                        line: i + 1,
                        message: format!("expected seq {}, found {}", existing.len(), entry.seq),
                    });
                }
                existing.push(entry);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok((
            Self {
                entries: Vec::new(),
                file: Some((path, BufWriter::new(file))),
            },
            existing,
        ))
    }

    /// Re-adds an entry read from disk without writing it again.
    pub(crate) fn restore(&mut self, entry: JournalEntry) {
        self.entries.push(entry);
    }

    pub fn append(&mut self, at: Timestamp, event: PlatformEvent) -> Result<&JournalEntry, JournalError> {
        let entry = JournalEntry {
            seq: self.entries.len() as u64,
            at,
            event,
        };
        if let Some((_, out)) = self.file.as_mut() {
            serde_json::to_writer(&mut *out, &entry).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
            out.flush()?;
            out.get_ref().sync_data()?;
        }
        self.entries.push(entry);
        Ok(self.entries.last().expect("just pushed"))
    }

    pub fn entries(&self) -> &[JournalEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn audit_trail(&self, challenge_id: &str) -> Vec<JournalEntry> {
        self.entries
            .iter()
            .filter(|e| e.event.is_audit_event() && e.event.challenge_id() == Some(challenge_id))
            .cloned()
            .collect()
    }
}
