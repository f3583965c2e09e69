//! Working time from raw event streams and cohort percentiles per exercise.
//!
//! Working time sums the gaps between consecutive events that are shorter
//! than five minutes, stopping at the first event that carries a full score.
//! Longer gaps are treated as the learner having been away.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ExerciseId, Seconds, StudentId, Timestamp};

/// Gaps of this length or longer do not count as work.
pub const IDLE_GAP_SECONDS: Seconds = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Run,
    Assess,
    Submit,
    Autosave,
    FocusGain,
    FocusLoss,
    /// The learner published a request for comments on the exercise.
    Rfc,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Run => "run",
            Self::Assess => "assess",
            Self::Submit => "submit",
            Self::Autosave => "autosave",
            Self::FocusGain => "focus_gain",
            Self::FocusLoss => "focus_loss",
            Self::Rfc => "rfc",
        }
    }
}

/// A timestamped learner action on one exercise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkEvent {
    #[serde(rename = "student_id")]
    pub student: StudentId,
    #[serde(rename = "exercise_id")]
    pub exercise: ExerciseId,
    pub timestamp: Timestamp,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_fraction: Option<f64>,
}

impl WorkEvent {
    pub fn new(student: &str, exercise: &str, timestamp: Timestamp, kind: EventKind) -> Self {
        Self {
            student: student.into(),
            exercise: exercise.into(),
            timestamp,
            kind,
            score_fraction: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score_fraction = Some(score);
        self
    }

    pub fn is_full_score(&self) -> bool {
        self.score_fraction.is_some_and(|s| s >= 1.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkingTimeError {
    #[error("no events supplied")]
    Empty,
    #[error("events are not sorted by timestamp (index {0})")]
    Unsorted(usize),
    #[error("events mix several student/exercise pairs (index {0})")]
    MixedStream(usize),
    #[error("score fraction {0} outside [0, 1]")]
    InvalidScore(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingTime {
    pub student: StudentId,
    pub exercise: ExerciseId,
    pub active_seconds: Seconds,
    pub reached_full_score: bool,
    pub first_full_score_at: Option<Timestamp>,
}

/// Computes the cleaned working time of one student on one exercise.
///
/// `events` must be sorted by timestamp and belong to a single
/// student/exercise pair.
pub fn compute_working_time(events: &[WorkEvent]) -> Result<WorkingTime, WorkingTimeError> {
    let first = events.first().ok_or(WorkingTimeError::Empty)?;
    for (i, pair) in events.windows(2).enumerate() {
        if pair[1].timestamp < pair[0].timestamp {
            return Err(WorkingTimeError::Unsorted(i + 1));
        }
    }
    for (i, e) in events.iter().enumerate() {
        if e.student != first.student || e.exercise != first.exercise {
            return Err(WorkingTimeError::MixedStream(i));
        }
        if let Some(score) = e.score_fraction {
            if !(0.0..=1.0).contains(&score) {
                return Err(WorkingTimeError::InvalidScore(score));
            }
        }
    }

    let mut tracker = WorkingTimeTracker::default();
    for e in events {
        tracker.observe(e.timestamp, e.is_full_score());
    }
    Ok(WorkingTime {
        student: first.student.clone(),
        exercise: first.exercise.clone(),
        active_seconds: tracker.active_seconds,
        reached_full_score: tracker.first_full_score_at.is_some(),
        first_full_score_at: tracker.first_full_score_at,
    })
}

/// Incremental form of [`compute_working_time`] for live streams.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkingTimeTracker {
    pub last_event_at: Option<Timestamp>,
    pub active_seconds: Seconds,
    pub first_full_score_at: Option<Timestamp>,
}

impl WorkingTimeTracker {
    /// Folds in the next event. Timestamps earlier than the previous one
    /// are treated as simultaneous.
    pub fn observe(&mut self, at: Timestamp, full_score: bool) {
        if self.first_full_score_at.is_some() {
            return;
        }
        if let Some(last) = self.last_event_at {
            let gap = at.saturating_sub(last);
            if gap < IDLE_GAP_SECONDS {
                self.active_seconds += gap;
            }
        }
        self.last_event_at = Some(self.last_event_at.map_or(at, |last| last.max(at)));
        if full_score {
            self.first_full_score_at = Some(at);
        }
    }

    pub fn solved(&self) -> bool {
        self.first_full_score_at.is_some()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PercentileError {
    #[error("percentile table is empty")]
    EmptyTable,
    #[error("percentile rank {0} outside (0, 1)")]
    InvalidRank(f64),
}

/// Completed working times of the cohort on one exercise, kept sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileTable {
    pub exercise: ExerciseId,
    samples: Vec<Seconds>,
}

impl PercentileTable {
    pub fn new(exercise: ExerciseId) -> Self {
        Self {
            exercise,
            samples: Vec::new(),
        }
    }

    pub fn from_samples(exercise: ExerciseId, mut samples: Vec<Seconds>) -> Self {
        samples.sort_unstable();
        Self { exercise, samples }
    }

    pub fn insert(&mut self, sample: Seconds) {
        let at = self.samples.partition_point(|&s| s <= sample);
        self.samples.insert(at, sample);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Seconds] {
        &self.samples
    }

    /// Nearest-rank percentile: the sample at 1-based rank `ceil(p * n)`.
    pub fn percentile(&self, p: f64) -> Result<Seconds, PercentileError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(PercentileError::InvalidRank(p));
        }
        if self.samples.is_empty() {
            return Err(PercentileError::EmptyTable);
        }
        let n = self.samples.len();
        // The epsilon absorbs representation error such as 0.6 * 5 = 3.0000000000000004.
        let rank = ((p * n as f64) - 1e-9).ceil().max(1.0) as usize;
        Ok(self.samples[rank.min(n) - 1])
    }

    /// Position of a working time relative to the cohort. An empty table
    /// yields the most favorable band.
    pub fn band(&self, student_time: Seconds) -> TimeBand {
        let (Ok(p40), Ok(p60), Ok(p80)) = (
            self.percentile(0.4),
            self.percentile(0.6),
            self.percentile(0.8),
        ) else {
            return TimeBand::Lt40;
        };
        if student_time < p40 {
            TimeBand::Lt40
        } else if student_time < p60 {
            TimeBand::Lt60
        } else if student_time < p80 {
            TimeBand::Lt80
        } else {
            TimeBand::Gte80
        }
    }
}

/// Working-time percentile column of the scoring table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeBand {
    Lt40,
    Lt60,
    Lt80,
    Gte80,
}

impl TimeBand {
    pub const ALL: [TimeBand; 4] = [Self::Lt40, Self::Lt60, Self::Lt80, Self::Gte80];
}

/// See [`PercentileTable::band`].
pub fn working_time_percentile_band(student_time: Seconds, table: &PercentileTable) -> TimeBand {
    table.band(student_time)
}

/// Percentile tables for every exercise that has completed measurements.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PercentileTables {
    tables: BTreeMap<ExerciseId, PercentileTable>,
}

impl PercentileTables {
    pub fn get(&self, exercise: &ExerciseId) -> Option<&PercentileTable> {
        self.tables.get(exercise)
    }

    pub fn insert(&mut self, exercise: &ExerciseId, sample: Seconds) {
        self.tables
            .entry(exercise.clone())
            .or_insert_with(|| PercentileTable::new(exercise.clone()))
            .insert(sample);
    }

    pub fn iter(&self) -> impl Iterator<Item = &PercentileTable> {
        self.tables.values()
    }

    /// Table for `exercise`, or an empty one when nothing was measured yet.
    pub fn table_or_empty(&self, exercise: &ExerciseId) -> std::borrow::Cow<'_, PercentileTable> {
        match self.tables.get(exercise) {
            Some(t) => std::borrow::Cow::Borrowed(t),
            None => std::borrow::Cow::Owned(PercentileTable::new(exercise.clone())),
        }
    }
}
