//! Just-in-time intervention decisions.
//!
//! A timer per student and exercise accumulates focused working time. Once it
//! reaches the target derived from the cohort's 75th percentile (never below
//! ten minutes) the student's group decides which prompt is shown. Daily and
//! per-exercise caps bound how often a student is interrupted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::InterventionGroup;
use crate::ids::{ExerciseId, Seconds, StudentId, Timestamp, SECONDS_PER_DAY};
use crate::working_time::PercentileTable;

#[derive(Debug, Error, PartialEq)]
pub enum InterventionError {
    #[error("invalid policy: {0}")]
    InvalidPolicy(&'static str),
    #[error("negative tick of {0} seconds")]
    NegativeTick(i64),
    #[error("action at {action_at} precedes intervention fired at {fired_at}")]
    ActionBeforeFiring {
        fired_at: Timestamp,
        action_at: Timestamp,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterventionPolicy {
    pub trigger_percentile: f64,
    pub min_active_seconds: Seconds,
    pub daily_cap: u32,
    pub per_exercise_cap: u32,
    pub attribution_window_seconds: Seconds,
}

impl Default for InterventionPolicy {
    fn default() -> Self {
        Self {
            trigger_percentile: 0.75,
            min_active_seconds: 600,
            daily_cap: 3,
            per_exercise_cap: 2,
            attribution_window_seconds: 600,
        }
    }
}

impl InterventionPolicy {
    pub fn validate(&self) -> Result<(), InterventionError> {
        if !(self.trigger_percentile > 0.0 && self.trigger_percentile < 1.0) {
            return Err(InterventionError::InvalidPolicy("trigger percentile must lie in (0, 1)"));
        }
        if self.min_active_seconds == 0 || self.attribution_window_seconds == 0 {
            return Err(InterventionError::InvalidPolicy("durations must be positive"));
        }
        if self.daily_cap == 0 || self.per_exercise_cap == 0 {
            return Err(InterventionError::InvalidPolicy("caps must be at least 1"));
        }
        Ok(())
    }

    fn trigger_time(&self, table: &PercentileTable) -> Option<Seconds> {
        table.percentile(self.trigger_percentile).ok()
    }
}

/// Focused seconds before the first prompt in a fresh session.
pub fn initial_target(table: &PercentileTable, policy: &InterventionPolicy) -> Seconds {
    policy
        .trigger_time(table)
        .map_or(policy.min_active_seconds, |p| p.max(policy.min_active_seconds))
}

/// Focused seconds before the first prompt when a student comes back to an
/// exercise after `prior_active_seconds` of earlier work.
pub fn returning_target(
    prior_active_seconds: Seconds,
    table: &PercentileTable,
    policy: &InterventionPolicy,
) -> Seconds {
    let remaining = policy
        .trigger_time(table)
        .map_or(0, |p| p.saturating_sub(prior_active_seconds));
    remaining.max(policy.min_active_seconds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimerEvent {
    FocusGain,
    FocusLoss,
    Tick(i64),
    Solved,
    /// A prompt was issued when the session had `active_at` focused seconds.
    Fired { active_at: Seconds },
}

/// Session timer of one student on one exercise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimerState {
    pub student: StudentId,
    pub exercise: ExerciseId,
    pub accumulated_active_seconds: Seconds,
    pub focused: bool,
    pub target_seconds: Seconds,
    pub fired_this_session: u32,
    pub solved: bool,
}

impl TimerState {
    pub fn new(student: StudentId, exercise: ExerciseId, target_seconds: Seconds) -> Self {
        Self {
            student,
            exercise,
            accumulated_active_seconds: 0,
            focused: true,
            target_seconds,
            fired_this_session: 0,
            solved: false,
        }
    }

    pub fn on_event(&mut self, event: TimerEvent, policy: &InterventionPolicy) -> Result<(), InterventionError> {
        match event {
            TimerEvent::FocusGain => self.focused = true,
            TimerEvent::FocusLoss => self.focused = false,
            TimerEvent::Tick(dt) => {
                let dt = u64::try_from(dt).map_err(|_| InterventionError::NegativeTick(dt))?;
                if self.focused && !self.solved {
                    self.accumulated_active_seconds += dt;
                }
            }
            TimerEvent::Solved => self.solved = true,
            TimerEvent::Fired { active_at } => {
                self.fired_this_session += 1;
                // Re-arm for a possible second prompt after another floor's worth of work.
                self.target_seconds = active_at.max(self.accumulated_active_seconds) + policy.min_active_seconds;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    RfcPrompt,
    BreakPrompt,
}

impl InterventionKind {
    pub fn for_group(group: InterventionGroup) -> Option<Self> {
        match group {
            InterventionGroup::Control => None,
            InterventionGroup::Break => Some(Self::BreakPrompt),
            InterventionGroup::Rfc => Some(Self::RfcPrompt),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionCounters {
    pub today_count: u32,
    pub exercise_count: u32,
}

/// True when a prompt is due for `state` regardless of group.
pub fn is_due(state: &TimerState, counters: InterventionCounters, policy: &InterventionPolicy) -> bool {
    state.accumulated_active_seconds >= state.target_seconds
        && state.accumulated_active_seconds >= policy.min_active_seconds
        && !state.solved
        && counters.today_count < policy.daily_cap
        && counters.exercise_count < policy.per_exercise_cap
}

/// Decides whether to show a prompt now. The control group never gets one.
pub fn should_fire(
    state: &TimerState,
    counters: InterventionCounters,
    group: InterventionGroup,
    policy: &InterventionPolicy,
) -> Option<InterventionKind> {
    let kind = InterventionKind::for_group(group)?;
    is_due(state, counters, policy).then_some(kind)
}

/// Prompt counts per UTC day and per exercise for one student.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CapLedger {
    per_day: BTreeMap<u64, u32>,
    per_exercise: BTreeMap<ExerciseId, u32>,
}

pub fn utc_day(at: Timestamp) -> u64 {
    at / SECONDS_PER_DAY
}

impl CapLedger {
    pub fn counters(&self, exercise: &ExerciseId, now: Timestamp) -> InterventionCounters {
        InterventionCounters {
            today_count: self.per_day.get(&utc_day(now)).copied().unwrap_or(0),
            exercise_count: self.per_exercise.get(exercise).copied().unwrap_or(0),
        }
    }

    pub fn record(&mut self, exercise: &ExerciseId, at: Timestamp) {
        *self.per_day.entry(utc_day(at)).or_default() += 1;
        *self.per_exercise.entry(exercise.clone()).or_default() += 1;
    }

    pub fn max_per_day(&self) -> u32 {
        self.per_day.values().copied().max().unwrap_or(0)
    }

    pub fn max_per_exercise(&self) -> u32 {
        self.per_exercise.values().copied().max().unwrap_or(0)
    }
}

/// What ended up in the decision log. Control-group students get shadow
/// decisions: never shown, but recorded where a prompt would have appeared so
/// that their behaviour can be compared against the treated groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    RfcPrompt,
    BreakPrompt,
    Shadow,
}

impl From<InterventionKind> for DecisionKind {
    fn from(kind: InterventionKind) -> Self {
        match kind {
            InterventionKind::RfcPrompt => Self::RfcPrompt,
            InterventionKind::BreakPrompt => Self::BreakPrompt,
        }
    }
}

impl DecisionKind {
    pub fn delivered(self) -> Option<InterventionKind> {
        match self {
            Self::RfcPrompt => Some(InterventionKind::RfcPrompt),
            Self::BreakPrompt => Some(InterventionKind::BreakPrompt),
            Self::Shadow => None,
        }
    }
}

/// How the student handled the dialog, as reported by the host.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    #[default]
    Pending,
    Dismissed,
    Acted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    RfcSent,
    BreakTaken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FollowUpAction {
    pub kind: ActionKind,
    pub at: Timestamp,
    /// Length of the break, for `BreakTaken`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_seconds: Option<Seconds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub id: u64,
    #[serde(rename = "student_id")]
    pub student: StudentId,
    #[serde(rename = "exercise_id")]
    pub exercise: ExerciseId,
    pub kind: DecisionKind,
    pub fired_at: Timestamp,
    pub target_seconds: Seconds,
    pub session_active_seconds: Seconds,
    #[serde(default)]
    pub disposition: Disposition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributed_action: Option<FollowUpAction>,
}

impl InterventionRecord {
    pub fn in_window(&self, at: Timestamp, policy: &InterventionPolicy) -> bool {
        at >= self.fired_at && at - self.fired_at < policy.attribution_window_seconds
    }

    /// Credits `action` to this intervention when it happened strictly
    /// within the attribution window. Returns whether it was attached.
    pub fn attribute_action(
        &mut self,
        action: FollowUpAction,
        policy: &InterventionPolicy,
    ) -> Result<bool, InterventionError> {
        if action.at < self.fired_at {
            return Err(InterventionError::ActionBeforeFiring {
                fired_at: self.fired_at,
                action_at: action.at,
            });
        }
        if self.attributed_action.is_none() && self.in_window(action.at, policy) {
            self.attributed_action = Some(action);
            Ok(true)
        } else {
            Ok(false)
        }
    }
}
