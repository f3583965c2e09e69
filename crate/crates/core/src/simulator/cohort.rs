use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::StudentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skill {
    Beginner,
    SomeKnowledge,
    Good,
    VeryGood,
    Expert,
}

impl Skill {
    pub const ALL: [Skill; 5] = [
        Self::Beginner,
        Self::SomeKnowledge,
        Self::Good,
        Self::VeryGood,
        Self::Expert,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Beginner => "beginner",
            Self::SomeKnowledge => "some_knowledge",
            Self::Good => "good",
            Self::VeryGood => "very_good",
            Self::Expert => "expert",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Behaviour parameters shared by all agents of one skill level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillParams {
    /// Share of the cohort with this skill.
    pub share: f64,
    /// Multiplier on the per-difficulty median working time.
    pub speed_multiplier: f64,
    /// Probability of asking for help when stuck, prompted or not.
    pub rfc_propensity: f64,
    /// Probability of leaving the course each time an exercise becomes a struggle.
    pub dropout_hazard: f64,
    /// Probability of abandoning an exercise with a partial score.
    pub give_up_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub beginner: SkillParams,
    pub some_knowledge: SkillParams,
    pub good: SkillParams,
    pub very_good: SkillParams,
    pub expert: SkillParams,
    /// Log-normal sigma of the individual jitter on the skill speed multiplier.
    pub speed_sigma: f64,
    /// Extra RFC probability after a delivered help-request prompt.
    pub intervention_responsiveness: f64,
}

const fn params(share: f64, speed: f64, rfc: f64, dropout: f64, give_up: f64) -> SkillParams {
    SkillParams {
        share,
        speed_multiplier: speed,
        rfc_propensity: rfc,
        dropout_hazard: dropout,
        give_up_probability: give_up,
    }
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            beginner: params(0.202, 1.6, 0.15, 0.12, 0.15),
            some_knowledge: params(0.478, 1.2, 0.12, 0.09, 0.10),
            good: params(0.16, 1.0, 0.09, 0.06, 0.06),
            very_good: params(0.10, 0.8, 0.06, 0.04, 0.04),
            expert: params(0.06, 0.6, 0.04, 0.03, 0.02),
            speed_sigma: 0.25,
            intervention_responsiveness: 0.15,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CohortError {
    #[error("cohort size must be at least 1")]
    Empty,
    #[error("skill shares must sum to 1, got {0}")]
    Shares(f64),
    #[error("invalid parameter `{0}`")]
    Parameter(&'static str),
}

impl CohortConfig {
    pub fn params(&self, skill: Skill) -> &SkillParams {
        match skill {
            Skill::Beginner => &self.beginner,
            Skill::SomeKnowledge => &self.some_knowledge,
            Skill::Good => &self.good,
            Skill::VeryGood => &self.very_good,
            Skill::Expert => &self.expert,
        }
    }

    pub fn params_mut(&mut self, skill: Skill) -> &mut SkillParams {
        match skill {
            Skill::Beginner => &mut self.beginner,
            Skill::SomeKnowledge => &mut self.some_knowledge,
            Skill::Good => &mut self.good,
            Skill::VeryGood => &mut self.very_good,
            Skill::Expert => &mut self.expert,
        }
    }

    /// Puts the whole cohort into one skill level.
    pub fn with_single_skill(mut self, skill: Skill) -> Self {
        for s in Skill::ALL {
            self.params_mut(s).share = if s == skill { 1.0 } else { 0.0 };
        }
        self
    }

    pub fn validate(&self) -> Result<(), CohortError> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        let mut total = 0.0;
        for skill in Skill::ALL {
            let p = self.params(skill);
            if !unit(p.share) {
                return Err(CohortError::Parameter("share"));
            }
            if !(p.speed_multiplier > 0.0 && p.speed_multiplier.is_finite()) {
                return Err(CohortError::Parameter("speed_multiplier"));
            }
            if !unit(p.rfc_propensity) {
                return Err(CohortError::Parameter("rfc_propensity"));
            }
            if !unit(p.dropout_hazard) {
                return Err(CohortError::Parameter("dropout_hazard"));
            }
            if !unit(p.give_up_probability) {
                return Err(CohortError::Parameter("give_up_probability"));
            }
            total += p.share;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(CohortError::Shares(total));
        }
        if !(self.speed_sigma >= 0.0 && self.speed_sigma.is_finite()) {
            return Err(CohortError::Parameter("speed_sigma"));
        }
        if !unit(self.intervention_responsiveness) {
            return Err(CohortError::Parameter("intervention_responsiveness"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    #[serde(rename = "student_id")]
    pub student: StudentId,
    pub skill: Skill,
    pub base_speed_multiplier: f64,
    pub rfc_propensity: f64,
    pub intervention_responsiveness: f64,
    pub dropout_hazard_per_struggle: f64,
    pub give_up_probability: f64,
    pub seed: u64,
}

/// Skill counts by largest remainder, so the mix is exact up to rounding.
fn skill_counts(n: usize, config: &CohortConfig) -> [usize; 5] {
    let quotas = Skill::ALL.map(|s| config.params(s).share * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..5).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        if config.params(Skill::ALL[i]).share > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

pub fn student_id(index: usize) -> StudentId {
    StudentId::new(format!("student-{index:05}"))
}

/// Builds `n` agents. Student ids do not depend on the seed, so group
/// assignment is stable across seeds.
pub fn generate_cohort(n: usize, config: &CohortConfig, seed: u64) -> Result<Vec<AgentProfile>, CohortError> {
    if n == 0 {
        return Err(CohortError::Empty);
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = skill_counts(n, config);
    let mut skills: Vec<Skill> = Skill::ALL
        .iter()
        .flat_map(|&s| std::iter::repeat_n(s, counts[s.index()]))
        .collect();
    skills.shuffle(&mut rng);
    let speed = LogNormal::new(0.0, config.speed_sigma).map_err(|_| CohortError::Parameter("speed_sigma"))?;
    Ok(skills
        .into_iter()
        .enumerate()
        .map(|(i, skill)| {
            let p = config.params(skill);
            AgentProfile {
                student: student_id(i),
                skill,
                base_speed_multiplier: p.speed_multiplier * speed.sample(&mut rng),
                rfc_propensity: p.rfc_propensity,
                intervention_responsiveness: config.intervention_responsiveness,
                dropout_hazard_per_struggle: p.dropout_hazard,
                give_up_probability: p.give_up_probability,
                seed: rng.random(),
            }
        })
        .collect())
}
