//! Bonus-exercise recommendation.
//!
//! The weekly bonus pool is first filtered for exercises the student has not
//! seen, whose topics the student has already practised, and whose difficulty
//! is at most one level above the hardest exercise the student fully solved.
//! Remaining candidates are ranked by potential benefit: the total increase of
//! the student's topic scores if the candidate were solved perfectly and
//! fast. Only the top candidate is served.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{unit_hash, BonusGroup, CoursePlan, ExerciseSpec};
use crate::ids::ExerciseId;
use crate::knowledge::{theta, KnowledgeVector, SubmissionOutcome};
use crate::student::StudentState;
use crate::working_time::TimeBand;

#[derive(Debug, Error, PartialEq)]
pub enum RecommendError {
    #[error("week {0} has no bonus pool")]
    NoPool(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet<'a> {
    pub week: u32,
    pub candidates: Vec<&'a ExerciseSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRecommendation {
    pub exercise: ExerciseId,
    /// Potential benefit; absent for fallbacks and non-ranked groups.
    pub benefit: Option<f64>,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Recommendation {
    Served(RankedRecommendation),
    /// Every exercise the student may get this week was already accessed.
    Exhausted,
}

impl Recommendation {
    pub fn served(&self) -> Option<&RankedRecommendation> {
        match self {
            Self::Served(r) => Some(r),
            Self::Exhausted => None,
        }
    }
}

/// Applies the non-repetition, concept and difficulty filters to a pool.
pub fn filter_candidates<'a>(
    week: u32,
    pool: &[&'a ExerciseSpec],
    student: &StudentState,
    vector: &KnowledgeVector,
    plan: &CoursePlan,
) -> CandidateSet<'a> {
    let max_difficulty = student.max_solved_difficulty(plan) + 1;
    let candidates = pool
        .iter()
        .copied()
        .filter(|e| !student.has_accessed(&e.id))
        .filter(|e| e.topic_ids().all(|t| vector.covers(t)))
        .filter(|e| e.difficulty <= max_difficulty)
        .collect();
    CandidateSet { week, candidates }
}

/// Sum over the candidate's topics of the score gain from a hypothetical
/// perfect, fast solve appended to `history`. Losses are clamped to zero per
/// topic.
pub fn potential_benefit(candidate: &ExerciseSpec, history: &[SubmissionOutcome], plan: &CoursePlan) -> f64 {
    let mut extended = history.to_vec();
    extended.push(SubmissionOutcome {
        student: history.first().map(|o| o.student.clone()).unwrap_or_default(),
        exercise: candidate.id.clone(),
        best_score_fraction: 1.0,
        working_time_band: TimeBand::Lt40,
        position: history.len() + 1,
    });
    candidate
        .topic_ids()
        .map(|topic| {
            let before = theta(history, topic, plan).unwrap_or(0.0);
            let after = theta(&extended, topic, plan).unwrap_or(0.0);
            (after - before).max(0.0)
        })
        .sum()
}

fn easier(a: &ExerciseSpec, b: &ExerciseSpec) -> Ordering {
    a.difficulty.cmp(&b.difficulty).then_with(|| a.id.cmp(&b.id))
}

/// Picks the bonus exercise for `student` in `week`.
///
/// `request_index` counts the bonus exercises of this week the student has
/// already accessed; it seeds the random group's pick so repeated requests
/// are reproducible.
pub fn recommend(
    week: u32,
    student: &StudentState,
    history: &[SubmissionOutcome],
    vector: &KnowledgeVector,
    plan: &CoursePlan,
    salt: &str,
) -> Result<Recommendation, RecommendError> {
    let pool = plan.bonus_pool(week);
    if pool.is_empty() {
        return Err(RecommendError::NoPool(week));
    }

    let group = student.groups.bonus;
    if group == BonusGroup::Dummy {
        let dummy = plan.dummy(week).ok_or(RecommendError::NoPool(week))?;
        return Ok(if student.has_accessed(&dummy.id) {
            Recommendation::Exhausted
        } else {
            Recommendation::Served(RankedRecommendation {
                exercise: dummy.id.clone(),
                benefit: None,
                fallback: false,
            })
        });
    }

    let set = filter_candidates(week, &pool, student, vector, plan);
    if set.candidates.is_empty() {
        return Ok(fallback(&pool, student));
    }

    let served = match group {
        BonusGroup::Tailored => {
            let (best, benefit) = set
                .candidates
                .iter()
                .map(|e| (*e, potential_benefit(e, history, plan)))
                .max_by(|(a, ba), (b, bb)| ba.total_cmp(bb).then_with(|| easier(b, a)))
                .expect("non-empty candidate set");
            RankedRecommendation {
                exercise: best.id.clone(),
                benefit: Some(benefit),
                fallback: false,
            }
        }
        BonusGroup::Random => {
            let request_index = pool.iter().filter(|e| student.has_accessed(&e.id)).count();
            let mut rng = random_pick_rng(salt, student, week, request_index);
            let pick = set.candidates[rng.random_range(0..set.candidates.len())];
            RankedRecommendation {
                exercise: pick.id.clone(),
                benefit: None,
                fallback: false,
            }
        }
        BonusGroup::Dummy => unreachable!("handled above"),
    };
    Ok(Recommendation::Served(served))
}

fn random_pick_rng(salt: &str, student: &StudentState, week: u32, request_index: usize) -> ChaCha8Rng {
    let key = format!("{}#{week}#{request_index}", student.id);
    let seed = (unit_hash(salt, "bonus-random", &key) * (1u64 << 53) as f64) as u64;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Easiest not-yet-accessed exercise of the pool.
fn fallback(pool: &[&ExerciseSpec], student: &StudentState) -> Recommendation {
    pool.iter()
        .filter(|e| !student.has_accessed(&e.id))
        .min_by(|a, b| easier(a, b))
        .map_or(Recommendation::Exhausted, |e| {
            Recommendation::Served(RankedRecommendation {
                exercise: e.id.clone(),
                benefit: None,
                fallback: true,
            })
        })
}
