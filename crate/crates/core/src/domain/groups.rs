//! Deterministic A/B group assignment.
//!
//! Each student is bucketed twice, once per experiment dimension, by hashing
//! `salt ‖ dimension tag ‖ student id` into `[0, 1)`. The unit interval is
//! split at 0.2 and 0.4 which yields 20/20/60 shares in both dimensions.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ids::StudentId;

const FIRST_CUT: f64 = 0.2;
const SECOND_CUT: f64 = 0.4;

const INTERVENTION_TAG: &str = "intervention";
const BONUS_TAG: &str = "bonus";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionGroup {
    Control,
    Break,
    Rfc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BonusGroup {
    Dummy,
    Random,
    Tailored,
}

impl InterventionGroup {
    pub const ALL: [InterventionGroup; 3] = [Self::Control, Self::Break, Self::Rfc];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Control => "control",
            Self::Break => "break",
            Self::Rfc => "rfc",
        }
    }

    /// Target share of the cohort.
    pub fn share(self) -> f64 {
        match self {
            Self::Control | Self::Break => 0.2,
            Self::Rfc => 0.6,
        }
    }
}

impl BonusGroup {
    pub const ALL: [BonusGroup; 3] = [Self::Dummy, Self::Random, Self::Tailored];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dummy => "dummy",
            Self::Random => "random",
            Self::Tailored => "tailored",
        }
    }

    pub fn share(self) -> f64 {
        match self {
            Self::Dummy | Self::Random => 0.2,
            Self::Tailored => 0.6,
        }
    }
}

impl fmt::Display for InterventionGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for BonusGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub student: StudentId,
    pub intervention: InterventionGroup,
    pub bonus: BonusGroup,
}

/// Maps `salt ‖ tag ‖ id` to a point in `[0, 1)` with 53 bits of precision.
pub fn unit_hash(salt: &str, tag: &str, id: &str) -> f64 {
    let mut hasher = Sha256::new();
    // 0x1f separates fields so that ("ab", "c") and ("a", "bc") differ.
    hasher.update(salt.as_bytes());
    hasher.update([0x1f]);
    hasher.update(tag.as_bytes());
    hasher.update([0x1f]);
    hasher.update(id.as_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(head) >> 11) as f64 / (1u64 << 53) as f64
}

fn bucket(u: f64) -> usize {
    if u < FIRST_CUT {
        0
    } else if u < SECOND_CUT {
        1
    } else {
        2
    }
}

/// Assigns a student to one intervention group and one bonus group.
///
/// Pure in `(student, salt)`; the two dimensions use distinct tags and are
/// therefore independent.
pub fn assign_groups(student: &StudentId, salt: &str) -> GroupAssignment {
    let intervention = InterventionGroup::ALL[bucket(unit_hash(salt, INTERVENTION_TAG, student.as_str()))];
    let bonus = BonusGroup::ALL[bucket(unit_hash(salt, BONUS_TAG, student.as_str()))];
    GroupAssignment {
        student: student.clone(),
        intervention,
        bonus,
    }
}
