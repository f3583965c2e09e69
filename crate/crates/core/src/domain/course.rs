//! Course structure: topics, annotated exercises, weekly pools.
//!
//! A course is described in a single TOML document:
//!
//! ```toml
//! weeks = 1
//!
//! [[topics]]
//! id = "loops"
//! name = "Loops"
//!
//! [[exercises]]
//! id = "w1-s1"
//! title = "Counting"
//! week = 1
//! difficulty = 1
//! pool = "standard"          # standard | bonus | dummy
//! topics = [{ topic = "loops", weight = 2 }]
//! ```
//!
//! Topic weights may be any positive numbers; they are normalized to sum to
//! one per exercise when the plan is loaded.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ExerciseId, TopicId};

/// Exercises with more topics than this are accepted but logged.
pub const RECOMMENDED_MAX_TOPICS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum CourseError {
    #[error("failed to parse course description: {0}")]
    Parse(String),
    #[error("course must span at least one week")]
    NoWeeks,
    #[error("duplicate topic id `{0}`")]
    DuplicateTopic(TopicId),
    #[error("duplicate exercise id `{0}`")]
    DuplicateExercise(ExerciseId),
    #[error("exercise must carry at least one topic (`{0}`)")]
    NoTopics(ExerciseId),
    #[error("exercise `{exercise}` references unknown topic `{topic}`")]
    DanglingTopic { exercise: ExerciseId, topic: TopicId },
    #[error("exercise `{exercise}` lists topic `{topic}` twice")]
    RepeatedTopic { exercise: ExerciseId, topic: TopicId },
    #[error("exercise `{exercise}` has non-positive weight {weight} for topic `{topic}`")]
    NonPositiveWeight {
        exercise: ExerciseId,
        topic: TopicId,
        weight: f64,
    },
    #[error("exercise `{0}` must have difficulty >= 1")]
    InvalidDifficulty(ExerciseId),
    #[error("exercise `{exercise}` is assigned to week {week}, outside 1..={weeks}")]
    InvalidWeek {
        exercise: ExerciseId,
        week: u32,
        weeks: u32,
    },
    #[error("week {0} has bonus exercises but no dummy exercise")]
    MissingDummy(u32),
    #[error("week {0} has more than one dummy exercise")]
    DuplicateDummy(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub id: TopicId,
    pub name: String,
}

/// Share of a topic in an exercise. After loading, weights of one exercise
/// are positive and sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicWeight {
    pub topic: TopicId,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    Standard,
    Bonus,
    Dummy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExerciseSpec {
    pub id: ExerciseId,
    pub title: String,
    pub week: u32,
    /// Ordinal difficulty, 1 is the easiest.
    pub difficulty: u32,
    pub pool: Pool,
    pub topics: Vec<TopicWeight>,
}

impl ExerciseSpec {
    /// Ratio of `topic` in this exercise, zero when the topic is not annotated.
    pub fn weight_of(&self, topic: &TopicId) -> f64 {
        self.topics
            .iter()
            .find(|tw| &tw.topic == topic)
            .map_or(0.0, |tw| tw.weight)
    }

    pub fn topic_ids(&self) -> impl Iterator<Item = &TopicId> {
        self.topics.iter().map(|tw| &tw.topic)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawCourse {
    weeks: u32,
    #[serde(default)]
    topics: Vec<Topic>,
    #[serde(default)]
    exercises: Vec<ExerciseSpec>,
}

/// A validated, immutable course description.
#[derive(Debug, Clone, PartialEq)]
pub struct CoursePlan {
    weeks: u32,
    topics: Vec<Topic>,
    exercises: Vec<ExerciseSpec>,
    index: HashMap<ExerciseId, usize>,
}

impl CoursePlan {
    /// Parses and validates a TOML course description.
    pub fn from_toml(source: &str) -> Result<Self, CourseError> {
        let raw: RawCourse = toml::from_str(source).map_err(|e| CourseError::Parse(e.to_string()))?;
        Self::new(raw.weeks, raw.topics, raw.exercises)
    }

    /// Validates the parts of a course and normalizes topic weights.
    pub fn new(
        weeks: u32,
        topics: Vec<Topic>,
        mut exercises: Vec<ExerciseSpec>,
    ) -> Result<Self, CourseError> {
        if weeks == 0 {
            return Err(CourseError::NoWeeks);
        }
        let mut topic_ids = BTreeSet::new();
        for topic in &topics {
            if !topic_ids.insert(topic.id.clone()) {
                return Err(CourseError::DuplicateTopic(topic.id.clone()));
            }
        }

        let mut index = HashMap::with_capacity(exercises.len());
        for (i, exercise) in exercises.iter_mut().enumerate() {
            if index.insert(exercise.id.clone(), i).is_some() {
                return Err(CourseError::DuplicateExercise(exercise.id.clone()));
            }
            validate_exercise(exercise, &topic_ids, weeks)?;
            normalize_weights(exercise);
            if exercise.topics.len() > RECOMMENDED_MAX_TOPICS {
                log::warn!(
                    "exercise `{}` carries {} topics; at most {} are recommended",
                    exercise.id,
                    exercise.topics.len(),
                    RECOMMENDED_MAX_TOPICS
                );
            }
        }

        let mut bonus_weeks = BTreeSet::new();
        let mut dummies: BTreeMap<u32, usize> = BTreeMap::new();
        for exercise in &exercises {
            match exercise.pool {
                Pool::Bonus => {
                    bonus_weeks.insert(exercise.week);
                }
                Pool::Dummy => *dummies.entry(exercise.week).or_default() += 1,
                Pool::Standard => {}
            }
        }
        for (&week, &count) in &dummies {
            if count > 1 {
                return Err(CourseError::DuplicateDummy(week));
            }
        }
        if let Some(&week) = bonus_weeks.iter().find(|w| !dummies.contains_key(w)) {
            return Err(CourseError::MissingDummy(week));
        }

        Ok(Self {
            weeks,
            topics,
            exercises,
            index,
        })
    }

    pub fn to_toml(&self) -> String {
        let raw = RawCourse {
            weeks: self.weeks,
            topics: self.topics.clone(),
            exercises: self.exercises.clone(),
        };
        toml::to_string(&raw).expect("course plan serializes")
    }

    pub fn weeks(&self) -> u32 {
        self.weeks
    }

    pub fn topics(&self) -> &[Topic] {
        &self.topics
    }

    pub fn exercises(&self) -> &[ExerciseSpec] {
        &self.exercises
    }

    pub fn exercise(&self, id: &str) -> Option<&ExerciseSpec> {
        self.index.get(id).map(|&i| &self.exercises[i])
    }

    pub fn in_week(&self, week: u32, pool: Pool) -> impl Iterator<Item = &ExerciseSpec> {
        self.exercises
            .iter()
            .filter(move |e| e.week == week && e.pool == pool)
    }

    pub fn bonus_pool(&self, week: u32) -> Vec<&ExerciseSpec> {
        self.in_week(week, Pool::Bonus).collect()
    }

    pub fn dummy(&self, week: u32) -> Option<&ExerciseSpec> {
        self.in_week(week, Pool::Dummy).next()
    }

    /// Topics practiced by the standard exercises of a week.
    pub fn week_topics(&self, week: u32) -> BTreeSet<TopicId> {
        self.in_week(week, Pool::Standard)
            .flat_map(|e| e.topic_ids().cloned())
            .collect()
    }

    /// Exercises above the recommended topic count.
    pub fn oversized_exercises(&self) -> Vec<&ExerciseId> {
        self.exercises
            .iter()
            .filter(|e| e.topics.len() > RECOMMENDED_MAX_TOPICS)
            .map(|e| &e.id)
            .collect()
    }
}

fn validate_exercise(
    exercise: &ExerciseSpec,
    topic_ids: &BTreeSet<TopicId>,
    weeks: u32,
) -> Result<(), CourseError> {
    if exercise.topics.is_empty() {
        return Err(CourseError::NoTopics(exercise.id.clone()));
    }
    if exercise.difficulty == 0 {
        return Err(CourseError::InvalidDifficulty(exercise.id.clone()));
    }
    if exercise.week == 0 || exercise.week > weeks {
        return Err(CourseError::InvalidWeek {
            exercise: exercise.id.clone(),
            week: exercise.week,
            weeks,
        });
    }
    let mut seen = BTreeSet::new();
    for tw in &exercise.topics {
        if !topic_ids.contains(&tw.topic) {
            return Err(CourseError::DanglingTopic {
                exercise: exercise.id.clone(),
                topic: tw.topic.clone(),
            });
        }
        if !seen.insert(&tw.topic) {
            return Err(CourseError::RepeatedTopic {
                exercise: exercise.id.clone(),
                topic: tw.topic.clone(),
            });
        }
        if !(tw.weight > 0.0 && tw.weight.is_finite()) {
            return Err(CourseError::NonPositiveWeight {
                exercise: exercise.id.clone(),
                topic: tw.topic.clone(),
                weight: tw.weight,
            });
        }
    }
    Ok(())
}

fn normalize_weights(exercise: &mut ExerciseSpec) {
    let total: f64 = exercise.topics.iter().map(|tw| tw.weight).sum();
    for tw in &mut exercise.topics {
        tw.weight /= total;
    }
}
