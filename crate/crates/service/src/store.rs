//! Append-only JSONL event log and the session state rebuilt from it.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use timbre_core::ratings::{is_valid_rating, RatingRecord};

use crate::error::ApiError;
use crate::screening::ScreeningTrial;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParticipantInfo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<u32>,
    #[serde(default)]
    pub hearing_issues: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledTrial {
    pub stim_a: String,
    pub stim_b: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ScreeningState {
    Pending,
    Passed { correct: usize },
    Failed { correct: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        session_id: String,
        participant_id: String,
        participant: ParticipantInfo,
        schedule_seed: u64,
        schedule: Vec<ScheduledTrial>,
        screening: Vec<ScreeningTrial>,
        created_at: DateTime<Utc>,
    },
    ScreeningResolved {
        session_id: String,
        answers: Vec<usize>,
        correct: usize,
        passed: bool,
        at: DateTime<Utc>,
    },
    RatingRecorded {
        record: RatingRecord,
    },
}

impl Event {
    pub fn session_id(&self) -> &str {
        match self {
            Event::SessionCreated { session_id, .. } | Event::ScreeningResolved { session_id, .. } => {
                session_id
            }
            Event::RatingRecorded { record } => &record.session_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub participant_id: String,
    pub participant: ParticipantInfo,
    pub schedule_seed: u64,
    pub schedule: Vec<ScheduledTrial>,
    pub screening_trials: Vec<ScreeningTrial>,
    pub screening: ScreeningState,
    pub created_at: DateTime<Utc>,
    /// `records[i]` is trial `i`; its length is the next trial index.
    pub records: Vec<RatingRecord>,
    /// Creation order within the store.
    pub sequence: u64,
}

/// A rating submission as received from a participant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingSubmission {
    pub trial_index: usize,
    pub rating: f64,
    #[serde(default)]
    pub replay_count_a: u32,
    #[serde(default)]
    pub replay_count_b: u32,
}

/// What to do with a rating submission.
#[derive(Debug, Clone, PartialEq)]
pub enum RatingDecision {
    /// A new record to persist and apply.
    Record(RatingRecord),
    /// Already recorded; answer with the stored record.
    Duplicate(RatingRecord),
}

impl Session {
    pub fn from_created(event: &Event, sequence: u64) -> Option<Self> {
        match event {
            Event::SessionCreated {
                session_id,
                participant_id,
                participant,
                schedule_seed,
                schedule,
                screening,
                created_at,
            } => Some(Self {
                session_id: session_id.clone(),
                participant_id: participant_id.clone(),
                participant: participant.clone(),
                schedule_seed: *schedule_seed,
                schedule: schedule.clone(),
                screening_trials: screening.clone(),
                screening: ScreeningState::Pending,
                created_at: *created_at,
                records: Vec::new(),
                sequence,
            }),
            _ => None,
        }
    }

    pub fn next_trial_index(&self) -> usize {
        self.records.len()
    }

    pub fn is_complete(&self) -> bool {
        self.records.len() == self.schedule.len()
    }

    /// Validates screening answers and returns the event that resolves them.
    pub fn decide_screening(
        &self,
        answers: &[usize],
        pass_threshold: usize,
        at: DateTime<Utc>,
    ) -> Result<Event, ApiError> {
        if self.screening != ScreeningState::Pending {
            return Err(ApiError::Conflict("screening already resolved".into()));
        }
        if answers.len() != self.screening_trials.len() {
            return Err(ApiError::BadRequest(format!(
                "expected {} screening answers, got {}",
                self.screening_trials.len(),
                answers.len()
            )));
        }
        let correct = self
            .screening_trials
            .iter()
            .zip(answers)
            .filter(|(t, &a)| t.correct_index == a)
            .count();
        Ok(Event::ScreeningResolved {
            session_id: self.session_id.clone(),
            answers: answers.to_vec(),
            correct,
            passed: correct >= pass_threshold,
            at,
        })
    }

    /// Validates a rating submission against the session state.
    pub fn decide_rating(
        &self,
        sub: &RatingSubmission,
        at: DateTime<Utc>,
    ) -> Result<RatingDecision, ApiError> {
        if !is_valid_rating(sub.rating) {
            return Err(ApiError::BadRequest(format!(
                "rating {} is not on the 0-9 grid in steps of 0.5",
                sub.rating
            )));
        }
        if !matches!(self.screening, ScreeningState::Passed { .. }) {
            return Err(ApiError::Conflict("headphone screening has not been passed".into()));
        }
        if let Some(existing) = self.records.get(sub.trial_index) {
            return Ok(RatingDecision::Duplicate(existing.clone()));
        }
        let expected = self.next_trial_index();
        if self.is_complete() {
            return Err(ApiError::Conflict("session is complete".into()));
        }
        if sub.trial_index != expected {
            return Err(ApiError::Conflict(format!(
                "expected trial {expected}, got {}",
                sub.trial_index
            )));
        }
        let trial = &self.schedule[expected];
        Ok(RatingDecision::Record(RatingRecord {
            participant_id: self.participant_id.clone(),
            session_id: self.session_id.clone(),
            trial_index: expected,
            stim_a: trial.stim_a.clone(),
            stim_b: trial.stim_b.clone(),
            rating: sub.rating,
            replay_count_a: sub.replay_count_a,
            replay_count_b: sub.replay_count_b,
            submitted_at: at,
            excluded_flag: false,
            exclusion_reason: None,
        }))
    }

    /// Applies a persisted event. Replay uses the same checks as live
    /// requests, so a log can never produce a state the API would refuse.
    pub fn apply(&mut self, event: &Event, pass_threshold: usize) -> Result<(), String> {
        match event {
            Event::SessionCreated { .. } => Err("session created twice".into()),
            Event::ScreeningResolved { answers, at, .. } => {
                let expect = self
                    .decide_screening(answers, pass_threshold, *at)
                    .map_err(|e| e.to_string())?;
                let Event::ScreeningResolved { correct, passed, .. } = expect else {
                    unreachable!("screening decision")
                };
                self.screening = if passed {
                    ScreeningState::Passed { correct }
                } else {
                    ScreeningState::Failed { correct }
                };
                Ok(())
            }
            Event::RatingRecorded { record } => {
                let sub = RatingSubmission {
                    trial_index: record.trial_index,
                    rating: record.rating,
                    replay_count_a: record.replay_count_a,
                    replay_count_b: record.replay_count_b,
                };
                match self.decide_rating(&sub, record.submitted_at).map_err(|e| e.to_string())? {
                    RatingDecision::Record(expected) if &expected == record => {
                        self.records.push(record.clone());
                        Ok(())
                    }
                    RatingDecision::Record(_) => Err(format!(
                        "rating for trial {} does not match the schedule",
                        record.trial_index
                    )),
                    RatingDecision::Duplicate(_) => {
                        Err(format!("trial {} recorded twice", record.trial_index))
                    }
                }
            }
        }
    }

    /// Records as exported: sessions reporting hearing issues carry the
    /// exclusion flag.
    pub fn export_records(&self) -> Vec<RatingRecord> {
        let mut out = self.records.clone();
        if self.participant.hearing_issues {
            for r in &mut out {
                r.excluded_flag = true;
                r.exclusion_reason = Some("hearing issues reported".into());
            }
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("event log {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("event log {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Durable append-only event log. Each event is one JSON line, synced to
/// disk before `append` returns.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    /// Opens (creating if needed) and reads back every complete event. A
    /// trailing partial line, left by a crash mid-write, is truncated away.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<Event>), LogError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| LogError::Io {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io)?;

        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            tracing::warn!(
                path = %path.display(),
                bytes = bytes.len() - complete,
                "discarding torn final log line"
            );
            file.set_len(complete as u64).map_err(io)?;
            file.seek(SeekFrom::End(0)).map_err(io)?;
            file.sync_all().map_err(io)?;
        }
        let mut events = Vec::new();
        for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let event = serde_json::from_slice(line).map_err(|e| LogError::Corrupt {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            events.push(event);
        }
        Ok((Self { path, file }, events))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &Event) -> Result<(), LogError> {
        let mut line = serde_json::to_vec(event).expect("events serialize");
        line.push(b'\n');
        let io = |source| LogError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(&line).map_err(io)?;
        self.file.sync_data().map_err(io)
    }
}
