//! Aggregation of polled preferences into per-objective weights.
//!
//! Objectives are identified by the reward they optimize. The general
//! functions accept any number of objectives; [`majority_weights`] and
//! [`proportional_weights`] are the two-objective forms used by the
//! intersection controller.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rewards::RewardKind;
use crate::sim::VoteTally;

pub type ObjectiveId = RewardKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w: BTreeMap<ObjectiveId, f64>,
}

impl Weights {
    pub fn pair(stops: f64, wait: f64) -> Self {
        Self {
            w: BTreeMap::from([(RewardKind::Stops, stops), (RewardKind::Wait, wait)]),
        }
    }

    pub fn get(&self, id: ObjectiveId) -> f64 {
        self.w.get(&id).copied().unwrap_or(0.0)
    }

    pub fn stops(&self) -> f64 {
        self.get(RewardKind::Stops)
    }

    pub fn wait(&self) -> f64 {
        self.get(RewardKind::Wait)
    }

    pub fn sum(&self) -> f64 {
        self.w.values().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VoteRule {
    Majority,
    Proportional,
}

impl VoteRule {
    pub const ALL: [VoteRule; 2] = [VoteRule::Majority, VoteRule::Proportional];

    pub fn name(self) -> &'static str {
        match self {
            VoteRule::Majority => "majority",
            VoteRule::Proportional => "proportional",
        }
    }

    pub fn weights(self, tally: &VoteTally) -> Weights {
        match self {
            VoteRule::Majority => majority_weights(tally),
            VoteRule::Proportional => proportional_weights(tally),
        }
    }
}

impl fmt::Display for VoteRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VoteRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(VoteRule::Majority),
            "proportional" => Ok(VoteRule::Proportional),
            _ => Err(Error::Parse(format!(
                "unknown vote rule `{s}` (expected majority|proportional)"
            ))),
        }
    }
}

fn uniform(ids: impl Iterator<Item = ObjectiveId>) -> Weights {
    let ids: Vec<_> = ids.collect();
    let share = 1.0 / ids.len() as f64;
    Weights {
        w: ids.into_iter().map(|k| (k, share)).collect(),
    }
}

/// One-hot on the unique leader; uniform over all tied leaders.
pub fn majority(votes: &BTreeMap<ObjectiveId, u32>) -> Weights {
    let Some(&top) = votes.values().max() else {
        return Weights { w: BTreeMap::new() };
    };
    let leaders = votes.values().filter(|&&v| v == top).count() as f64;
    Weights {
        w: votes
            .iter()
            .map(|(&k, &v)| (k, if v == top { 1.0 / leaders } else { 0.0 }))
            .collect(),
    }
}

/// Vote shares; uniform when nobody voted.
pub fn proportional(votes: &BTreeMap<ObjectiveId, u32>) -> Weights {
    let total: u64 = votes.values().map(|&v| v as u64).sum();
    if total == 0 {
        return uniform(votes.keys().copied());
    }
    Weights {
        w: votes.iter().map(|(&k, &v)| (k, v as f64 / total as f64)).collect(),
    }
}

fn tally_map(t: &VoteTally) -> BTreeMap<ObjectiveId, u32> {
    BTreeMap::from([(RewardKind::Stops, t.votes_stops), (RewardKind::Wait, t.votes_wait)])
}

pub fn majority_weights(t: &VoteTally) -> Weights {
    majority(&tally_map(t))
}

pub fn proportional_weights(t: &VoteTally) -> Weights {
    proportional(&tally_map(t))
}
