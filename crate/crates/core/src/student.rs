use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{CoursePlan, GroupAssignment};
use crate::ids::{ExerciseId, StudentId};

/// What the recommender needs to know about a learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentState {
    pub id: StudentId,
    pub groups: GroupAssignment,
    /// Exercises in order of first access.
    pub accessed: Vec<ExerciseId>,
    /// Exercises with a full score.
    pub solved: BTreeSet<ExerciseId>,
}

impl StudentState {
    pub fn new(groups: GroupAssignment) -> Self {
        Self {
            id: groups.student.clone(),
            groups,
            accessed: Vec::new(),
            solved: BTreeSet::new(),
        }
    }

    pub fn has_accessed(&self, exercise: &ExerciseId) -> bool {
        self.accessed.contains(exercise)
    }

    /// Index of `exercise` in access order, or past the end when not accessed.
    pub fn access_rank(&self, exercise: &ExerciseId) -> usize {
        self.accessed
            .iter()
            .position(|e| e == exercise)
            .unwrap_or(self.accessed.len())
    }

    pub fn touch(&mut self, exercise: &ExerciseId) -> bool {
        if self.has_accessed(exercise) {
            false
        } else {
            self.accessed.push(exercise.clone());
            true
        }
    }

    /// Highest difficulty among fully solved exercises, 0 if none.
    pub fn max_solved_difficulty(&self, plan: &CoursePlan) -> u32 {
        self.solved
            .iter()
            .filter_map(|e| plan.exercise(e.as_str()))
            .map(|e| e.difficulty)
            .max()
            .unwrap_or(0)
    }
}
