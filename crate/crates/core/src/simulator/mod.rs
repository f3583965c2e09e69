//! Synthetic cohort simulation and experiment reporting.

mod agent;
mod cohort;
mod report;

pub use agent::{simulate, SimulationConfig};
pub use cohort::{generate_cohort, student_id, AgentProfile, CohortConfig, CohortError, Skill, SkillParams};
pub use report::{
    report, BonusMetrics, ExperimentReport, GroupMetrics, MeanSd, ReportError, SkillGroupRate, WeakestTopicHistogram,
    MAX_BREAK_SECONDS,
};
