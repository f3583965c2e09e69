//! Adaptive support engine for introductory programming courses.
//!
//! * [`working_time`] turns raw IDE events into working times and
//!   per-exercise percentile tables.
//! * [`intervention`] decides when a struggling learner should be prompted
//!   to ask for help or take a break.
//! * [`knowledge`] estimates per-topic knowledge from graded submissions.
//! * [`recommender`] picks bonus exercises from the estimated knowledge.
//! * [`store`] ties everything together as an event-sourced log.
//! * [`simulator`] drives the store with a synthetic cohort.

pub mod domain;
pub mod ids;
pub mod intervention;
pub mod knowledge;
pub mod recommender;
pub mod simulator;
pub mod store;
pub mod student;
pub mod working_time;

pub use ids::{ExerciseId, Seconds, StudentId, Timestamp, TopicId};
