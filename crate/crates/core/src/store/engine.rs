//! In-memory engine state. Every mutation goes through [`Engine::apply`], so
//! the state is a pure fold over the log entries.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{assign_groups, CoursePlan, InterventionGroup};
use crate::ids::{ExerciseId, Seconds, StudentId, Timestamp};
use crate::intervention::{
    initial_target, is_due, returning_target, ActionKind, CapLedger, DecisionKind, Disposition,
    FollowUpAction, InterventionKind, InterventionRecord, TimerEvent, TimerState,
};
use crate::knowledge::StudentKnowledge;
use crate::student::StudentState;
use crate::working_time::{EventKind, PercentileTables, WorkEvent, WorkingTimeTracker, IDLE_GAP_SECONDS};

use super::{LogEntry, StoreConfig, StoreError};

/// Progress of one student on one exercise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExerciseProgress {
    pub first_event_at: Timestamp,
    pub last_activity_at: Timestamp,
    pub working: WorkingTimeTracker,
    pub best_score: Option<f64>,
    pub timer: TimerState,
    /// Focused seconds from earlier sessions on this exercise.
    pub prior_active_seconds: Seconds,
    pub sessions: u32,
    pub focus_lost_at: Option<Timestamp>,
    pub decisions: Vec<u64>,
    pub rfcs: u32,
}

impl ExerciseProgress {
    pub fn total_active_seconds(&self) -> Seconds {
        self.prior_active_seconds + self.timer.accumulated_active_seconds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub state: StudentState,
    pub knowledge: StudentKnowledge,
    pub caps: CapLedger,
    pub last_event_at: Timestamp,
    pub exercises: BTreeMap<ExerciseId, ExerciseProgress>,
}

/// Result of an intervention check.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckOutcome {
    /// Nothing due.
    None,
    /// A prompt must be shown to the student.
    Fired(InterventionRecord),
    /// A control-group student reached the point where a prompt would have
    /// been shown. Recorded, never delivered.
    Shadow(InterventionRecord),
}

impl CheckOutcome {
    pub fn record(&self) -> Option<&InterventionRecord> {
        match self {
            Self::None => None,
            Self::Fired(r) | Self::Shadow(r) => Some(r),
        }
    }

    pub fn delivered(&self) -> Option<(InterventionKind, Seconds)> {
        match self {
            Self::Fired(r) => r.kind.delivered().map(|k| (k, r.target_seconds)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct EventKey(u64, EventKind);

#[derive(Debug, Clone)]
pub struct Engine {
    plan: Arc<CoursePlan>,
    config: StoreConfig,
    students: BTreeMap<StudentId, StudentRecord>,
    tables: PercentileTables,
    decisions: Vec<InterventionRecord>,
    // (student, exercise) -> timestamps/kinds seen, for at-least-once delivery.
    seen: HashSet<(StudentId, ExerciseId, EventKey)>,
}

impl Engine {
    pub fn new(plan: Arc<CoursePlan>, config: StoreConfig) -> Self {
        Self {
            plan,
            config,
            students: BTreeMap::new(),
            tables: PercentileTables::default(),
            decisions: Vec::new(),
            seen: HashSet::new(),
        }
    }

    pub fn plan(&self) -> &CoursePlan {
        &self.plan
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn students(&self) -> &BTreeMap<StudentId, StudentRecord> {
        &self.students
    }

    pub fn student(&self, id: &StudentId) -> Option<&StudentRecord> {
        self.students.get(id)
    }

    pub fn tables(&self) -> &PercentileTables {
        &self.tables
    }

    pub fn decisions(&self) -> &[InterventionRecord] {
        &self.decisions
    }

    pub fn is_duplicate(&self, event: &WorkEvent) -> bool {
        self.seen.contains(&(
            event.student.clone(),
            event.exercise.clone(),
            EventKey(event.timestamp, event.kind),
        ))
    }

    /// Checks an incoming event without changing any state.
    pub fn validate_event(&self, event: &WorkEvent) -> Result<(), StoreError> {
        if event.student.is_empty() {
            return Err(StoreError::Malformed("empty student id".into()));
        }
        if self.plan.exercise(event.exercise.as_str()).is_none() {
            return Err(StoreError::UnknownExercise(event.exercise.clone()));
        }
        if let Some(score) = event.score_fraction {
            if !(0.0..=1.0).contains(&score) {
                return Err(StoreError::Malformed(format!("score fraction {score} outside [0, 1]")));
            }
        }
        if let Some(record) = self.students.get(&event.student) {
            if event.timestamp + self.config.timestamp_tolerance_seconds < record.last_event_at {
                return Err(StoreError::TimestampRegression {
                    student: event.student.clone(),
                    last: record.last_event_at,
                    got: event.timestamp,
                });
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, entry: &LogEntry) -> Result<(), StoreError> {
        match entry {
            LogEntry::Event(event) => self.apply_event(event),
            LogEntry::Decision(record) => self.apply_decision(record),
            LogEntry::Disposition {
                decision_id,
                disposition,
            } => self.apply_disposition(*decision_id, *disposition),
        }
    }

    fn apply_event(&mut self, event: &WorkEvent) -> Result<(), StoreError> {
        self.validate_event(event)?;
        let policy = &self.config.policy;
        let table = self.tables.table_or_empty(&event.exercise);
        let record = self.students.entry(event.student.clone()).or_insert_with(|| {
            let groups = assign_groups(&event.student, &self.config.salt);
            StudentRecord {
                knowledge: StudentKnowledge::new(event.student.clone()),
                state: StudentState::new(groups),
                caps: CapLedger::default(),
                last_event_at: event.timestamp,
                exercises: BTreeMap::new(),
            }
        });
        record.state.touch(&event.exercise);
        record.last_event_at = record.last_event_at.max(event.timestamp);

        let progress = record
            .exercises
            .entry(event.exercise.clone())
            .or_insert_with(|| ExerciseProgress {
                first_event_at: event.timestamp,
                last_activity_at: event.timestamp,
                working: WorkingTimeTracker::default(),
                best_score: None,
                timer: TimerState::new(
                    event.student.clone(),
                    event.exercise.clone(),
                    initial_target(&table, policy),
                ),
                prior_active_seconds: 0,
                sessions: 1,
                focus_lost_at: None,
                decisions: Vec::new(),
                rfcs: 0,
            });

        let gap = event.timestamp.saturating_sub(progress.last_activity_at);
        if let Some(lost_at) = progress.focus_lost_at.take() {
            let duration = event.timestamp.saturating_sub(lost_at);
            if duration >= IDLE_GAP_SECONDS {
                let action = FollowUpAction {
                    kind: ActionKind::BreakTaken,
                    at: lost_at,
                    duration_seconds: Some(duration),
                };
                attribute(&mut self.decisions, &progress.decisions, action, policy)?;
            }
        }
        if gap >= IDLE_GAP_SECONDS {
            // The student left and came back: new session with a returning target.
            progress.prior_active_seconds += progress.timer.accumulated_active_seconds;
            let solved = progress.timer.solved;
            progress.timer = TimerState::new(
                event.student.clone(),
                event.exercise.clone(),
                returning_target(progress.prior_active_seconds, &table, policy),
            );
            progress.timer.solved = solved;
            progress.sessions += 1;
        } else {
            progress.timer.on_event(TimerEvent::Tick(gap as i64), policy)?;
        }

        let was_solved = progress.working.solved();
        progress.working.observe(event.timestamp, event.is_full_score());
        progress.last_activity_at = progress.last_activity_at.max(event.timestamp);

        match event.kind {
            EventKind::FocusLoss => {
                progress.timer.on_event(TimerEvent::FocusLoss, policy)?;
                progress.focus_lost_at = Some(event.timestamp);
            }
            EventKind::Rfc => {
                progress.rfcs += 1;
                progress.timer.on_event(TimerEvent::FocusGain, policy)?;
                let action = FollowUpAction {
                    kind: ActionKind::RfcSent,
                    at: event.timestamp,
                    duration_seconds: None,
                };
                attribute(&mut self.decisions, &progress.decisions, action, policy)?;
            }
            _ => progress.timer.on_event(TimerEvent::FocusGain, policy)?,
        }

        if let Some(score) = event.score_fraction {
            progress.best_score = Some(progress.best_score.map_or(score, |b| b.max(score)));
            let band = table.band(progress.working.active_seconds);
            if event.is_full_score() && !was_solved {
                progress.timer.on_event(TimerEvent::Solved, policy)?;
                record.state.solved.insert(event.exercise.clone());
            }
            let state = &record.state;
            record.knowledge.update_on_submission(
                &event.exercise,
                score,
                band,
                |e| state.access_rank(e),
                &self.plan,
            );
            if event.is_full_score() && !was_solved {
                let sample = progress.working.active_seconds;
                drop(table);
                self.tables.insert(&event.exercise, sample);
            }
        }

        self.seen.insert((
            event.student.clone(),
            event.exercise.clone(),
            EventKey(event.timestamp, event.kind),
        ));
        Ok(())
    }

    /// Evaluates whether a prompt is due at `now` without changing state.
    pub fn evaluate_check(
        &self,
        student: &StudentId,
        exercise: &ExerciseId,
        now: Timestamp,
    ) -> Result<Option<InterventionRecord>, StoreError> {
        if self.plan.exercise(exercise.as_str()).is_none() {
            return Err(StoreError::UnknownExercise(exercise.clone()));
        }
        let record = self
            .students
            .get(student)
            .ok_or_else(|| StoreError::UnknownStudent(student.clone()))?;
        let progress = record.exercises.get(exercise).ok_or_else(|| StoreError::NoActivity {
            student: student.clone(),
            exercise: exercise.clone(),
        })?;
        let policy = &self.config.policy;
        let idle = now.saturating_sub(progress.last_activity_at);
        if idle >= IDLE_GAP_SECONDS {
            return Ok(None);
        }
        let mut probe = progress.timer.clone();
        probe.on_event(TimerEvent::Tick(idle as i64), policy)?;
        let counters = record.caps.counters(exercise, now);
        if !is_due(&probe, counters, policy) {
            return Ok(None);
        }
        let kind = match record.state.groups.intervention {
            InterventionGroup::Control => DecisionKind::Shadow,
            group => InterventionKind::for_group(group)
                .expect("treated groups have a prompt")
                .into(),
        };
        Ok(Some(InterventionRecord {
            id: self.decisions.len() as u64,
            student: student.clone(),
            exercise: exercise.clone(),
            kind,
            fired_at: now,
            target_seconds: probe.target_seconds,
            session_active_seconds: probe.accumulated_active_seconds,
            disposition: Disposition::Pending,
            attributed_action: None,
        }))
    }

    fn apply_decision(&mut self, decision: &InterventionRecord) -> Result<(), StoreError> {
        if decision.id != self.decisions.len() as u64 {
            return Err(StoreError::Malformed(format!(
                "decision id {} out of sequence (expected {})",
                decision.id,
                self.decisions.len()
            )));
        }
        let record = self
            .students
            .get_mut(&decision.student)
            .ok_or_else(|| StoreError::UnknownStudent(decision.student.clone()))?;
        let progress = record
            .exercises
            .get_mut(&decision.exercise)
            .ok_or_else(|| StoreError::NoActivity {
                student: decision.student.clone(),
                exercise: decision.exercise.clone(),
            })?;
        record.caps.record(&decision.exercise, decision.fired_at);
        progress.timer.on_event(
            TimerEvent::Fired {
                active_at: decision.session_active_seconds,
            },
            &self.config.policy,
        )?;
        progress.decisions.push(decision.id);
        self.decisions.push(decision.clone());
        Ok(())
    }

    fn apply_disposition(&mut self, id: u64, disposition: Disposition) -> Result<(), StoreError> {
        let record = self
            .decisions
            .get_mut(id as usize)
            .ok_or(StoreError::UnknownDecision(id))?;
        record.disposition = disposition;
        Ok(())
    }
}

/// Credits an action to the most recent decision on the exercise whose
/// window contains it and that has no action yet.
fn attribute(
    decisions: &mut [InterventionRecord],
    candidates: &[u64],
    action: FollowUpAction,
    policy: &crate::intervention::InterventionPolicy,
) -> Result<(), StoreError> {
    for &id in candidates.iter().rev() {
        let record = &mut decisions[id as usize];
        if action.at < record.fired_at {
            continue;
        }
        if record.attribute_action(action, policy)? {
            break;
        }
    }
    Ok(())
}
