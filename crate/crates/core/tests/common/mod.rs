//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};

use nudge_core::domain::CoursePlan;
use nudge_core::intervention::InterventionPolicy;
use nudge_core::store::LogEntry;
use nudge_core::working_time::{EventKind, TimeBand, WorkEvent};
use nudge_core::{ExerciseId, StudentId, Timestamp, TopicId};

/// Scoring table, rows from "< 40%" to "100%", columns from "< 40%" to "≥ 80%".
pub const SIGMA: [[f64; 4]; 5] = [
    [0.0, 0.0, 0.0, 0.0],
    [0.2, 0.2, 0.2, 0.1],
    [0.5, 0.4, 0.4, 0.3],
    [0.6, 0.5, 0.5, 0.4],
    [1.0, 0.9, 0.8, 0.7],
];

pub fn sigma(score: f64, band: TimeBand) -> f64 {
    let row = if score == 1.0 {
        4
    } else if score >= 0.8 {
        3
    } else if score >= 0.6 {
        2
    } else if score >= 0.4 {
        1
    } else {
        0
    };
    let col = match band {
        TimeBand::Lt40 => 0,
        TimeBand::Lt60 => 1,
        TimeBand::Lt80 => 2,
        TimeBand::Gte80 => 3,
    };
    SIGMA[row][col]
}

pub fn phi(i: usize, n: usize) -> f64 {
    let m = n as f64 / 2.0;
    let k = 3.0 / m;
    1.0 / (1.0 + f64::exp(-k * (i as f64 - m)))
}

/// One history entry as seen by the knowledge formula.
pub struct Entry {
    pub exercise: ExerciseId,
    pub score: f64,
    pub band: TimeBand,
    pub position: usize,
}

/// Direct evaluation of the knowledge score: weighted mean of sigma with
/// weights difficulty * topic ratio * recency.
pub fn theta(entries: &[Entry], topic: &TopicId, plan: &CoursePlan) -> Option<f64> {
    let n = entries.len();
    let terms: Vec<(f64, f64)> = entries
        .iter()
        .filter_map(|e| {
            let spec = plan.exercise(e.exercise.as_str())?;
            let total: f64 = spec.topics.iter().map(|t| t.weight).sum();
            let rho = spec.topics.iter().find(|t| &t.topic == topic)?.weight / total;
            let w = spec.difficulty as f64 * rho * phi(e.position, n);
            Some((sigma(e.score, e.band) * w, w))
        })
        .collect();
    if terms.is_empty() {
        return None;
    }
    let num: f64 = terms.iter().map(|t| t.0).sum();
    let den: f64 = terms.iter().map(|t| t.1).sum();
    Some(num / den)
}

/// Gain of appending a perfect, fast attempt on `candidate`, summed over
/// its topics with losses clamped at zero.
pub fn benefit(entries: &[Entry], candidate: &ExerciseId, plan: &CoursePlan) -> f64 {
    let spec = plan.exercise(candidate.as_str()).unwrap();
    let mut extended: Vec<Entry> = entries
        .iter()
        .map(|e| Entry {
            exercise: e.exercise.clone(),
            score: e.score,
            band: e.band,
            position: e.position,
        })
        .collect();
    extended.push(Entry {
        exercise: candidate.clone(),
        score: 1.0,
        band: TimeBand::Lt40,
        position: entries.len() + 1,
    });
    spec.topics
        .iter()
        .map(|t| {
            let before = theta(entries, &t.topic, plan).unwrap_or(0.0);
            let after = theta(&extended, &t.topic, plan).unwrap_or(0.0);
            (after - before).max(0.0)
        })
        .sum()
}

/// Brute-force working time: sum consecutive gaps under five minutes, up to
/// the first full score.
pub fn working_time(events: &[WorkEvent]) -> u64 {
    let last = events
        .iter()
        .position(|e| e.score_fraction == Some(1.0))
        .unwrap_or(events.len().saturating_sub(1));
    let mut total = 0;
    for i in 0..last {
        let gap = events[i + 1].timestamp - events[i].timestamp;
        if gap < 300 {
            total += gap;
        }
    }
    total
}

#[derive(Debug, Default)]
pub struct Violations {
    pub decisions: usize,
    pub before_floor: Vec<String>,
    pub over_daily_cap: Vec<String>,
    pub over_exercise_cap: Vec<String>,
    pub after_solve: Vec<String>,
}

impl Violations {
    pub fn total(&self) -> usize {
        self.before_floor.len() + self.over_daily_cap.len() + self.over_exercise_cap.len() + self.after_solve.len()
    }
}

#[derive(Default)]
struct Session {
    last: Option<Timestamp>,
    focused: bool,
    focused_seconds: u64,
    solved: bool,
}

/// Scans a store log for decisions that break the intervention rules.
/// Focused time is rebuilt from the raw events: a gap of five minutes or
/// more starts a new session, time after a focus loss does not count.
pub fn check_decisions(log: &[LogEntry], policy: &InterventionPolicy) -> Violations {
    let mut sessions: HashMap<(StudentId, ExerciseId), Session> = HashMap::new();
    let mut per_day: BTreeMap<(StudentId, u64), u32> = BTreeMap::new();
    let mut per_exercise: BTreeMap<(StudentId, ExerciseId), u32> = BTreeMap::new();
    let mut v = Violations::default();
    for entry in log {
        match entry {
            LogEntry::Event(e) => {
                let s = sessions.entry((e.student.clone(), e.exercise.clone())).or_default();
                if let Some(last) = s.last {
                    let gap = e.timestamp - last;
                    if gap >= 300 {
                        s.focused_seconds = 0;
                    } else if s.focused {
                        s.focused_seconds += gap;
                    }
                }
                s.last = Some(e.timestamp);
                s.focused = e.kind != EventKind::FocusLoss;
                s.solved |= e.score_fraction == Some(1.0);
            }
            LogEntry::Decision(d) => {
                v.decisions += 1;
                let label = format!("{} on {} at {}", d.student, d.exercise, d.fired_at);
                let s = &sessions[&(d.student.clone(), d.exercise.clone())];
                let idle = d.fired_at - s.last.unwrap();
                let focused = s.focused_seconds + if s.focused && idle < 300 { idle } else { 0 };
                if focused < policy.min_active_seconds {
                    v.before_floor.push(format!("{label}: {focused}s focused"));
                }
                if s.solved {
                    v.after_solve.push(label.clone());
                }
                let day = per_day.entry((d.student.clone(), d.fired_at / 86_400)).or_default();
                *day += 1;
                if *day > policy.daily_cap {
                    v.over_daily_cap.push(label.clone());
                }
                let ex = per_exercise.entry((d.student.clone(), d.exercise.clone())).or_default();
                *ex += 1;
                if *ex > policy.per_exercise_cap {
                    v.over_exercise_cap.push(label);
                }
            }
            LogEntry::Disposition { .. } => {}
        }
    }
    v
}

/// RFC counts per student, including students without any.
pub fn rfcs_per_student(log: &[LogEntry], students: &HashSet<StudentId>) -> HashMap<StudentId, u32> {
    let mut counts: HashMap<StudentId, u32> = students.iter().map(|s| (s.clone(), 0)).collect();
    for entry in log {
        if let LogEntry::Event(e) = entry {
            if e.kind == EventKind::Rfc {
                *counts.get_mut(&e.student).unwrap() += 1;
            }
        }
    }
    counts
}

/// Students with at least one event.
pub fn started(log: &[LogEntry]) -> HashSet<StudentId> {
    log.iter()
        .filter_map(|e| match e {
            LogEntry::Event(e) => Some(e.student.clone()),
            _ => None,
        })
        .collect()
}

pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}
