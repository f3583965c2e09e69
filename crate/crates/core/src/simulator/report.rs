use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cohort::{AgentProfile, Skill};
use crate::domain::{assign_groups, BonusGroup, CoursePlan, InterventionGroup, Pool};
use crate::ids::{ExerciseId, Seconds, StudentId, Timestamp, TopicId};
use crate::intervention::InterventionRecord;
use crate::knowledge::weakest_topic;
use crate::store::{Engine, LogEntry, StoreConfig, StoreError};
use crate::working_time::{EventKind, WorkEvent, WorkingTimeTracker, IDLE_GAP_SECONDS};

/// Focus losses longer than this are treated as the end of a session, not a break.
pub const MAX_BREAK_SECONDS: Seconds = 2 * 3600;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("log references unknown student `{0}`")]
    UnknownStudent(StudentId),
    #[error("log references unknown exercise `{0}`")]
    UnknownExercise(ExerciseId),
    #[error("replaying the log failed: {0}")]
    Replay(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, sd: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: InterventionGroup,
    pub started: usize,
    /// Submitted at least half of the final week's standard exercises.
    pub finished: usize,
    /// 1 - finished / started.
    pub dropout_rate: f64,
    /// Share of started students whose last event precedes the final week.
    pub dropout_rate_last_event: f64,
    pub score_all: MeanSd,
    pub score_finishers: MeanSd,
    pub rfcs: usize,
    pub rfcs_per_student: f64,
    /// Share of RFCs sent within the attribution window of a decision.
    pub rfcs_after_intervention: f64,
    /// Decisions, delivered or shadow.
    pub decisions: usize,
    /// Share of decisions followed by an attributed RFC or break.
    pub decisions_followed: f64,
    pub mean_time_to_rfc_minutes: f64,
    pub breaks: usize,
    pub mean_break_minutes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillGroupRate {
    pub skill: Skill,
    pub group: InterventionGroup,
    pub students: usize,
    pub rfcs: usize,
    pub rfcs_per_student: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakestTopicHistogram {
    pub week: u32,
    pub skill: Skill,
    pub counts: BTreeMap<TopicId, usize>,
    /// Students without any estimate for the week's topics.
    pub unknown: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonusMetrics {
    pub group: BonusGroup,
    pub students: usize,
    pub bonus_started: usize,
    pub bonus_solved: usize,
    pub bonus_score: MeanSd,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub students: usize,
    pub groups: Vec<GroupMetrics>,
    pub rfcs_by_skill: Vec<SkillGroupRate>,
    pub weakest_topics: Vec<WeakestTopicHistogram>,
    pub bonus: Vec<BonusMetrics>,
}

impl ExperimentReport {
    pub fn group(&self, group: InterventionGroup) -> Option<&GroupMetrics> {
        self.groups.iter().find(|g| g.group == group)
    }
}

#[derive(Default)]
struct StudentTally {
    last_event_week: u32,
    best: HashMap<ExerciseId, f64>,
    submitted: BTreeSet<ExerciseId>,
    bonus: BTreeSet<ExerciseId>,
    rfcs: usize,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn mean(values: &[f64]) -> f64 {
    ratio(values.iter().sum(), values.len() as f64)
}

/// Computes the experiment metrics from a store log. Groups are re-derived
/// from the salt; skill levels come from `cohort`.
pub fn report(
    log: &[LogEntry],
    cohort: &[AgentProfile],
    plan: &CoursePlan,
    config: &StoreConfig,
) -> Result<ExperimentReport, ReportError> {
    let skills: HashMap<&StudentId, Skill> = cohort.iter().map(|a| (&a.student, a.skill)).collect();
    let groups: HashMap<&StudentId, _> = cohort
        .iter()
        .map(|a| (&a.student, assign_groups(&a.student, &config.salt)))
        .collect();
    let window = config.policy.attribution_window_seconds;
    let final_week = plan.weeks();

    let mut tallies: HashMap<&StudentId, StudentTally> = HashMap::new();
    let mut trackers: HashMap<(&StudentId, &ExerciseId), WorkingTimeTracker> = HashMap::new();
    let mut focus_lost: HashMap<&StudentId, Timestamp> = HashMap::new();
    let mut decisions_by: HashMap<(&StudentId, &ExerciseId), Vec<&InterventionRecord>> = HashMap::new();
    let mut per_group: BTreeMap<InterventionGroup, GroupAcc> = BTreeMap::new();
    let mut replay = Engine::new(Arc::new(plan.clone()), config.clone());

    for entry in log {
        replay.apply(entry)?;
        match entry {
            LogEntry::Decision(d) => {
                let g = groups.get(&d.student).ok_or_else(|| ReportError::UnknownStudent(d.student.clone()))?;
                let acc = per_group.entry(g.intervention).or_default();
                acc.decisions += 1;
                decisions_by.entry((&d.student, &d.exercise)).or_default().push(d);
            }
            LogEntry::Disposition { .. } => {}
            LogEntry::Event(e) => {
                let g = groups.get(&e.student).ok_or_else(|| ReportError::UnknownStudent(e.student.clone()))?;
                let spec = plan
                    .exercise(e.exercise.as_str())
                    .ok_or_else(|| ReportError::UnknownExercise(e.exercise.clone()))?;
                let tally = tallies.entry(&e.student).or_default();
                tally.last_event_week = tally.last_event_week.max(spec.week);
                if let Some(score) = e.score_fraction {
                    let best = tally.best.entry(e.exercise.clone()).or_insert(0.0);
                    *best = best.max(score);
                }
                let tracker = trackers.entry((&e.student, &e.exercise)).or_default();
                tracker.observe(e.timestamp, e.is_full_score());
                let acc = per_group.entry(g.intervention).or_default();

                if let Some(lost) = focus_lost.remove(&e.student) {
                    let away = e.timestamp - lost;
                    if (IDLE_GAP_SECONDS..MAX_BREAK_SECONDS).contains(&away) {
                        acc.break_minutes.push(away as f64 / 60.0);
                    }
                }
                match e.kind {
                    EventKind::Submit => {
                        tally.submitted.insert(e.exercise.clone());
                    }
                    EventKind::FocusLoss => {
                        focus_lost.insert(&e.student, e.timestamp);
                    }
                    EventKind::Rfc => {
                        tally.rfcs += 1;
                        acc.rfcs += 1;
                        acc.time_to_rfc_minutes.push(tracker.active_seconds as f64 / 60.0);
                        if after_intervention(e, decisions_by.get(&(&e.student, &e.exercise)), window) {
                            acc.rfcs_after += 1;
                        }
                    }
                    _ => {}
                }
                if spec.pool != Pool::Standard {
                    tally.bonus.insert(e.exercise.clone());
                }
            }
        }
    }

    // Follow-up actions are attached to decisions after the fact.
    for d in replay.decisions() {
        if d.attributed_action.is_some() {
            per_group.entry(groups[&d.student].intervention).or_default().followed += 1;
        }
    }

    let standard: Vec<&ExerciseId> = plan
        .exercises()
        .iter()
        .filter(|e| e.pool == Pool::Standard)
        .map(|e| &e.id)
        .collect();
    let final_standard: Vec<&ExerciseId> = plan.in_week(final_week, Pool::Standard).map(|e| &e.id).collect();

    let mut by_skill: BTreeMap<(Skill, InterventionGroup), (usize, usize)> = BTreeMap::new();
    let mut histograms: BTreeMap<(u32, Skill), WeakestTopicHistogram> = BTreeMap::new();
    let mut bonus: BTreeMap<BonusGroup, BonusMetrics> = BTreeMap::new();
    let mut bonus_scores: BTreeMap<BonusGroup, Vec<f64>> = BTreeMap::new();

    let mut students: Vec<&&StudentId> = tallies.keys().collect();
    students.sort();
    for student in students {
        let tally = &tallies[*student];
        let g = &groups[*student];
        let skill = *skills.get(*student).ok_or_else(|| ReportError::UnknownStudent((*student).clone()))?;
        let acc = per_group.entry(g.intervention).or_default();
        acc.started += 1;
        let score = mean(
            &standard
                .iter()
                .map(|x| tally.best.get(*x).copied().unwrap_or(0.0))
                .collect::<Vec<_>>(),
        );
        acc.scores.push(score);
        let completed = final_standard.iter().filter(|x| tally.submitted.contains(**x)).count();
        if !final_standard.is_empty() && 2 * completed >= final_standard.len() {
            acc.finished += 1;
            acc.finisher_scores.push(score);
        }
        if tally.last_event_week < final_week {
            acc.last_event_dropouts += 1;
        }
        let cell = by_skill.entry((skill, g.intervention)).or_default();
        cell.0 += 1;
        cell.1 += tally.rfcs;

        let vector = replay.student(student).map(|r| r.knowledge.vector());
        for week in 1..=final_week {
            let h = histograms.entry((week, skill)).or_insert_with(|| WeakestTopicHistogram {
                week,
                skill,
                counts: BTreeMap::new(),
                unknown: 0,
            });
            match vector.and_then(|v| weakest_topic(v, &plan.week_topics(week))) {
                Some(topic) => *h.counts.entry(topic).or_default() += 1,
                None => h.unknown += 1,
            }
        }

        let b = bonus.entry(g.bonus).or_insert_with(|| BonusMetrics {
            group: g.bonus,
            students: 0,
            bonus_started: 0,
            bonus_solved: 0,
            bonus_score: MeanSd::default(),
        });
        b.students += 1;
        b.bonus_started += tally.bonus.len();
        for exercise in &tally.bonus {
            let best = tally.best.get(exercise).copied().unwrap_or(0.0);
            b.bonus_solved += usize::from(best >= 1.0);
            bonus_scores.entry(g.bonus).or_default().push(best);
        }
    }
    for (group, b) in bonus.iter_mut() {
        b.bonus_score = MeanSd::of(bonus_scores.get(group).map_or(&[][..], |v| v.as_slice()));
    }

    Ok(ExperimentReport {
        students: tallies.len(),
        groups: InterventionGroup::ALL
            .iter()
            .map(|&g| per_group.remove(&g).unwrap_or_default().finish(g))
            .collect(),
        rfcs_by_skill: Skill::ALL
            .iter()
            .flat_map(|&s| InterventionGroup::ALL.iter().map(move |&g| (s, g)))
            .map(|(skill, group)| {
                let (students, rfcs) = by_skill.get(&(skill, group)).copied().unwrap_or_default();
                SkillGroupRate {
                    skill,
                    group,
                    students,
                    rfcs,
                    rfcs_per_student: ratio(rfcs as f64, students as f64),
                }
            })
            .collect(),
        weakest_topics: histograms.into_values().collect(),
        bonus: bonus.into_values().collect(),
    })
}

fn after_intervention(rfc: &WorkEvent, decisions: Option<&Vec<&InterventionRecord>>, window: Seconds) -> bool {
    decisions.is_some_and(|ds| {
        ds.iter()
            .any(|d| d.fired_at <= rfc.timestamp && rfc.timestamp - d.fired_at < window)
    })
}

#[derive(Default)]
struct GroupAcc {
    started: usize,
    finished: usize,
    last_event_dropouts: usize,
    scores: Vec<f64>,
    finisher_scores: Vec<f64>,
    rfcs: usize,
    rfcs_after: usize,
    decisions: usize,
    followed: usize,
    time_to_rfc_minutes: Vec<f64>,
    break_minutes: Vec<f64>,
}

impl GroupAcc {
    fn finish(self, group: InterventionGroup) -> GroupMetrics {
        let started = self.started as f64;
        GroupMetrics {
            group,
            started: self.started,
            finished: self.finished,
            dropout_rate: if self.started == 0 {
                0.0
            } else {
                1.0 - self.finished as f64 / started
            },
            dropout_rate_last_event: ratio(self.last_event_dropouts as f64, started),
            score_all: MeanSd::of(&self.scores),
            score_finishers: MeanSd::of(&self.finisher_scores),
            rfcs: self.rfcs,
            rfcs_per_student: ratio(self.rfcs as f64, started),
            rfcs_after_intervention: ratio(self.rfcs_after as f64, self.rfcs as f64),
            decisions: self.decisions,
            decisions_followed: ratio(self.followed as f64, self.decisions as f64),
            mean_time_to_rfc_minutes: mean(&self.time_to_rfc_minutes),
            breaks: self.break_minutes.len(),
            mean_break_minutes: mean(&self.break_minutes),
        }
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

impl fmt::Display for ExperimentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Course key metrics ({} students)", self.students)?;
        writeln!(
            f,
            "{:<8} {:>8} {:>9} {:>9} {:>11} {:>16} {:>16}",
            "group", "started", "finished", "dropout", "last-event", "score all", "score finisher"
        )?;
        for g in &self.groups {
            writeln!(
                f,
                "{:<8} {:>8} {:>9} {:>9} {:>11} {:>16} {:>16}",
                g.group.as_str(),
                g.started,
                g.finished,
                pct(g.dropout_rate),
                pct(g.dropout_rate_last_event),
                format!("{} (±{})", pct(g.score_all.mean), pct(g.score_all.sd)),
                format!("{} (±{})", pct(g.score_finishers.mean), pct(g.score_finishers.sd)),
            )?;
        }
        writeln!(f)?;
        writeln!(f, "Help requests and breaks")?;
        writeln!(
            f,
            "{:<8} {:>13} {:>13} {:>14} {:>13} {:>10} {:>10}",
            "group", "RFCs/student", "RFCs after", "time to RFC", "break", "decisions", "followed"
        )?;
        for g in &self.groups {
            writeln!(
                f,
                "{:<8} {:>13.2} {:>13} {:>10.1} min {:>9.2} min {:>10} {:>10}",
                g.group.as_str(),
                g.rfcs_per_student,
                pct(g.rfcs_after_intervention),
                g.mean_time_to_rfc_minutes,
                g.mean_break_minutes,
                g.decisions,
                pct(g.decisions_followed),
            )?;
        }
        writeln!(f)?;
        writeln!(f, "RFCs per student by skill")?;
        let mut header = format!("{:<15}", "skill");
        for g in InterventionGroup::ALL {
            let _ = write!(header, " {:>8}", g.as_str());
        }
        writeln!(f, "{header}")?;
        for skill in Skill::ALL {
            let mut line = format!("{:<15}", skill.as_str());
            for g in InterventionGroup::ALL {
                let rate = self
                    .rfcs_by_skill
                    .iter()
                    .find(|r| r.skill == skill && r.group == g)
                    .map_or(0.0, |r| r.rfcs_per_student);
                let _ = write!(line, " {rate:>8.2}");
            }
            writeln!(f, "{line}")?;
        }
        writeln!(f)?;
        writeln!(f, "Weakest topic by week and skill")?;
        for h in &self.weakest_topics {
            let mut line = format!("week {} {:<15}", h.week, h.skill.as_str());
            for (topic, n) in &h.counts {
                let _ = write!(line, " {topic}={n}");
            }
            if h.unknown > 0 {
                let _ = write!(line, " unknown={}", h.unknown);
            }
            writeln!(f, "{line}")?;
        }
        writeln!(f)?;
        writeln!(f, "Bonus exercises")?;
        writeln!(f, "{:<9} {:>9} {:>8} {:>7} {:>16}", "group", "students", "started", "solved", "score")?;
        for b in &self.bonus {
            writeln!(
                f,
                "{:<9} {:>9} {:>8} {:>7} {:>16}",
                b.group.as_str(),
                b.students,
                b.bonus_started,
                b.bonus_solved,
                format!("{} (±{})", pct(b.bonus_score.mean), pct(b.bonus_score.sd)),
            )?;
        }
        Ok(())
    }
}
