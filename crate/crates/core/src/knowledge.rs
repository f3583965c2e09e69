//! Per-student knowledge model.
//!
//! Every attempted exercise contributes a score σ derived from the achieved
//! test score and the working-time band. The knowledge score of a topic is
//! the average of those scores weighted by the topic's share in the exercise,
//! the exercise difficulty and a recency weight φ that favours later
//! exercises:
//!
//! ```text
//! Θ(s, t) = Σ σ·δ·ρ·φ / Σ δ·ρ·φ
//! ```
//!
//! φ is a logistic curve over the position of the exercise in the student's
//! history with midpoint `n / 2` and steepness `3 / (n / 2)`, where `n` is
//! the number of exercises in the history.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::CoursePlan;
use crate::ids::{ExerciseId, StudentId, TopicId};
use crate::working_time::TimeBand;

/// Scoring table, rows `< 40%`, `≥ 40%`, `≥ 60%`, `≥ 80%`, `100%` of the
/// test score, columns by working-time band.
pub const SCORING_TABLE: [[f64; 4]; 5] = [
    [0.0, 0.0, 0.0, 0.0],
    [0.2, 0.2, 0.2, 0.1],
    [0.5, 0.4, 0.4, 0.3],
    [0.6, 0.5, 0.5, 0.4],
    [1.0, 0.9, 0.8, 0.7],
];

#[derive(Debug, Error, PartialEq)]
pub enum KnowledgeError {
    #[error("position {position} outside 1..={total}")]
    PositionOutOfRange { position: usize, total: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionOutcome {
    #[serde(rename = "student_id")]
    pub student: StudentId,
    #[serde(rename = "exercise_id")]
    pub exercise: ExerciseId,
    pub best_score_fraction: f64,
    pub working_time_band: TimeBand,
    /// 1-based position in the student's exercise history.
    pub position: usize,
}

impl SubmissionOutcome {
    pub fn sigma(&self) -> f64 {
        scoring_sigma(self.best_score_fraction, self.working_time_band)
    }
}

/// Row of the scoring table; scores are rounded down to the next block and
/// only an exact full score reaches the top row.
pub fn score_row(score_fraction: f64) -> usize {
    if score_fraction >= 1.0 {
        4
    } else if score_fraction >= 0.8 {
        3
    } else if score_fraction >= 0.6 {
        2
    } else if score_fraction >= 0.4 {
        1
    } else {
        0
    }
}

pub fn scoring_sigma(score_fraction: f64, band: TimeBand) -> f64 {
    SCORING_TABLE[score_row(score_fraction)][band as usize]
}

/// Recency weight of the exercise at `position` among `total`.
pub fn diminishing_phi(position: usize, total: usize) -> Result<f64, KnowledgeError> {
    if position == 0 || position > total {
        return Err(KnowledgeError::PositionOutOfRange { position, total });
    }
    let midpoint = 0.5 * total as f64;
    let steepness = 3.0 / midpoint;
    Ok(1.0 / (1.0 + (-steepness * (position as f64 - midpoint)).exp()))
}

/// Knowledge score of `topic`, or `None` when no exercise in `history`
/// touches it. Positions must run 1..=n.
pub fn theta(history: &[SubmissionOutcome], topic: &TopicId, plan: &CoursePlan) -> Option<f64> {
    let total = history.len();
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for outcome in history {
        let Some(exercise) = plan.exercise(outcome.exercise.as_str()) else {
            continue;
        };
        let rho = exercise.weight_of(topic);
        if rho <= 0.0 {
            continue;
        }
        let phi = diminishing_phi(outcome.position, total).expect("history positions run 1..=n");
        let weight = exercise.difficulty as f64 * rho * phi;
        numerator += outcome.sigma() * weight;
        denominator += weight;
    }
    (denominator > 0.0).then(|| (numerator / denominator).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeVector {
    #[serde(rename = "student_id")]
    pub student: StudentId,
    pub scores: BTreeMap<TopicId, f64>,
    pub coverage: BTreeMap<TopicId, usize>,
}

impl KnowledgeVector {
    pub fn new(student: StudentId) -> Self {
        Self {
            student,
            ..Self::default()
        }
    }

    pub fn score(&self, topic: &TopicId) -> Option<f64> {
        self.scores.get(topic).copied()
    }

    pub fn covers(&self, topic: &TopicId) -> bool {
        self.scores.contains_key(topic)
    }

    /// Line-oriented export: one record per covered topic.
    pub fn records(&self) -> Vec<KnowledgeRecord> {
        self.scores
            .iter()
            .map(|(topic, &score)| KnowledgeRecord {
                student: self.student.clone(),
                topic: topic.clone(),
                score,
                coverage: self.coverage.get(topic).copied().unwrap_or(0),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeRecord {
    #[serde(rename = "student_id")]
    pub student: StudentId,
    #[serde(rename = "topic_id")]
    pub topic: TopicId,
    pub score: f64,
    pub coverage: usize,
}

/// A student's attempt history together with the knowledge vector derived
/// from it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudentKnowledge {
    history: Vec<SubmissionOutcome>,
    vector: KnowledgeVector,
}

impl StudentKnowledge {
    pub fn new(student: StudentId) -> Self {
        Self {
            history: Vec::new(),
            vector: KnowledgeVector::new(student),
        }
    }

    pub fn history(&self) -> &[SubmissionOutcome] {
        &self.history
    }

    pub fn vector(&self) -> &KnowledgeVector {
        &self.vector
    }

    pub fn contains(&self, exercise: &ExerciseId) -> bool {
        self.history.iter().any(|o| &o.exercise == exercise)
    }

    /// Records an attempt and recomputes the topics of that exercise.
    ///
    /// `rank` orders the history (the caller uses the order of first access);
    /// a new exercise is inserted at its rank and positions are renumbered.
    /// A repeated exercise keeps its place and only a better score replaces
    /// the stored outcome.
    pub fn update_on_submission(
        &mut self,
        exercise: &ExerciseId,
        score_fraction: f64,
        band: TimeBand,
        rank: impl Fn(&ExerciseId) -> usize,
        plan: &CoursePlan,
    ) {
        match self.history.iter_mut().find(|o| &o.exercise == exercise) {
            Some(existing) => {
                let better = score_fraction > existing.best_score_fraction
                    || (score_fraction == existing.best_score_fraction
                        && scoring_sigma(score_fraction, band) > existing.sigma());
                if !better {
                    return;
                }
                existing.best_score_fraction = score_fraction;
                existing.working_time_band = band;
            }
            None => {
                let key = rank(exercise);
                let at = self.history.partition_point(|o| rank(&o.exercise) <= key);
                self.history.insert(
                    at,
                    SubmissionOutcome {
                        student: self.vector.student.clone(),
                        exercise: exercise.clone(),
                        best_score_fraction: score_fraction,
                        working_time_band: band,
                        position: 0,
                    },
                );
                for (i, o) in self.history.iter_mut().enumerate() {
                    o.position = i + 1;
                }
            }
        }
        self.refresh_topics_of(exercise, plan);
    }

    fn refresh_topics_of(&mut self, exercise: &ExerciseId, plan: &CoursePlan) {
        let Some(spec) = plan.exercise(exercise.as_str()) else {
            return;
        };
        for topic in spec.topic_ids() {
            let coverage = self
                .history
                .iter()
                .filter(|o| plan.exercise(o.exercise.as_str()).is_some_and(|e| e.weight_of(topic) > 0.0))
                .count();
            match theta(&self.history, topic, plan) {
                Some(score) => {
                    self.vector.scores.insert(topic.clone(), score);
                    self.vector.coverage.insert(topic.clone(), coverage);
                }
                None => {
                    self.vector.scores.remove(topic);
                    self.vector.coverage.remove(topic);
                }
            }
        }
    }
}

/// Covered topic of `week_topics` with the lowest score; ties go to the
/// lexicographically smallest topic id.
pub fn weakest_topic(vector: &KnowledgeVector, week_topics: &BTreeSet<TopicId>) -> Option<TopicId> {
    week_topics
        .iter()
        .filter_map(|t| vector.score(t).map(|s| (t, s)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)))
        .map(|(t, _)| t.clone())
}
