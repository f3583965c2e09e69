//! Course domain model and experiment group assignment.

mod course;
mod groups;

pub use course::{CourseError, CoursePlan, ExerciseSpec, Pool, Topic, TopicWeight, RECOMMENDED_MAX_TOPICS};
pub use groups::{assign_groups, unit_hash, BonusGroup, GroupAssignment, InterventionGroup};

/// Four-week introductory Java course shipped with the crate, used by the
/// simulator when no course file is given.
pub const DEFAULT_COURSE_TOML: &str = include_str!("../../fixtures/java_course.toml");

pub fn default_course() -> CoursePlan {
    CoursePlan::from_toml(DEFAULT_COURSE_TOML).expect("bundled course is valid")
}
