//! From per-objective Q-vectors to a signal phase.
//!
//! Each objective's Q-vector is squashed with a softmax so that objectives
//! with different reward scales become comparable, the normalized vectors
//! are blended with the vote weights, and the phase with the largest blended
//! value wins.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::Mlp;
use crate::rewards::RewardKind;
use crate::sim::{Observation, Phase, SimWorld, VoteTally};
use crate::voting::{ObjectiveId, VoteRule, Weights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QVector {
    pub values: Vec<f64>,
}

impl QVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }
}

/// Softmax-normalized Q-values: positive, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedQ {
    pub values: Vec<f64>,
}

pub const DEFAULT_TEMPERATURE: f64 = 1.0;

pub fn normalize_q(q: &QVector) -> Result<NormalizedQ> {
    normalize_q_with_temperature(q, DEFAULT_TEMPERATURE)
}

pub fn normalize_q_with_temperature(q: &QVector, temperature: f64) -> Result<NormalizedQ> {
    if q.values.is_empty() {
        return Err(Error::Empty("Q-vector"));
    }
    if !(temperature.is_finite() && temperature > 0.0) || q.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let max = q.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = q.values.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    // exp underflow would produce exact zeros; keep entries strictly positive
    Ok(NormalizedQ {
        values: exps.iter().map(|e| (e / total).max(f64::MIN_POSITIVE)).collect(),
    })
}

/// Vote-weighted blend `q'_a = sum_k w_k q^k_a`.
pub fn integrate(qs: &BTreeMap<ObjectiveId, NormalizedQ>, w: &Weights) -> Result<QVector> {
    if qs.is_empty() {
        return Err(Error::Empty("objectives"));
    }
    if !qs.keys().eq(w.w.keys()) {
        return Err(Error::ObjectiveMismatch);
    }
    let n = qs.values().next().map(|q| q.values.len()).unwrap_or(0);
    let mut out = vec![0.0; n];
    for (id, q) in qs {
        if q.values.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: q.values.len(),
            });
        }
        let wk = w.get(*id);
        out.iter_mut().zip(&q.values).for_each(|(o, v)| *o += wk * v);
    }
    Ok(QVector::new(out))
}

/// Argmax; exact ties keep the incumbent action when it is among the
/// leaders, otherwise the lowest leading index.
pub fn select_action(qp: &QVector, incumbent: usize) -> Result<usize> {
    let max = qp
        .values
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or(Error::Empty("Q-vector"))?;
    if qp.values.get(incumbent) == Some(&max) {
        return Ok(incumbent);
    }
    Ok(qp.values.iter().position(|&v| v == max).unwrap_or(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyId {
    Single(RewardKind),
    Multi(VoteRule),
}

impl PolicyId {
    /// Policy column value: `stops`, `wait`, `linear`, `cobb` or `multi`.
    pub fn name(self) -> &'static str {
        match self {
            PolicyId::Single(k) => k.name(),
            PolicyId::Multi(_) => "multi",
        }
    }

    /// Vote rule column value, `-` for single-objective policies.
    pub fn rule_name(self) -> &'static str {
        match self {
            PolicyId::Single(_) => "-",
            PolicyId::Multi(r) => r.name(),
        }
    }

    /// Unique label, e.g. `multi-proportional`.
    pub fn label(self) -> String {
        match self {
            PolicyId::Single(k) => k.name().to_string(),
            PolicyId::Multi(r) => format!("multi-{}", r.name()),
        }
    }

    pub fn parse(policy: &str, rule: Option<VoteRule>) -> Result<Self> {
        if let Some(r) = policy.strip_prefix("multi-") {
            return Ok(PolicyId::Multi(r.parse()?));
        }
        if policy == "multi" {
            return rule
                .map(PolicyId::Multi)
                .ok_or_else(|| Error::Parse("policy `multi` requires a vote rule".into()));
        }
        policy.parse().map(PolicyId::Single).map_err(|_| {
            Error::Parse(format!(
                "unknown policy `{policy}` (expected stops|wait|linear|cobb|multi)"
            ))
        })
    }

    /// Objectives whose networks this policy needs.
    pub fn objectives(self) -> Vec<ObjectiveId> {
        match self {
            PolicyId::Single(k) => vec![k],
            PolicyId::Multi(_) => vec![RewardKind::Stops, RewardKind::Wait],
        }
    }
}

/// Everything the controller looked at and produced for one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub observation: Observation,
    pub tally: VoteTally,
    pub weights: Weights,
    pub per_objective: BTreeMap<ObjectiveId, NormalizedQ>,
    pub integrated: QVector,
    pub incumbent: Phase,
    pub action: usize,
}

/// A frozen controller. Single-objective controllers act greedily on their
/// network's raw Q-values; the multi-objective controller runs the full
/// normalize, vote, integrate, argmax pipeline.
#[derive(Debug, Clone)]
pub enum Controller {
    Greedy {
        objective: ObjectiveId,
        net: Mlp,
    },
    Multi {
        nets: BTreeMap<ObjectiveId, Mlp>,
        rule: VoteRule,
        temperature: f64,
    },
}

impl Controller {
    pub fn greedy(objective: ObjectiveId, net: Mlp) -> Self {
        Controller::Greedy { objective, net }
    }

    pub fn multi(nets: BTreeMap<ObjectiveId, Mlp>, rule: VoteRule) -> Result<Self> {
        let mut dims = nets.values().map(|n| (n.input_dim(), n.output_dim()));
        let first = dims.next().ok_or(Error::Empty("objective networks"))?;
        if let Some(bad) = dims.find(|d| *d != first) {
            return Err(Error::DimensionMismatch {
                expected: first.0,
                got: bad.0,
            });
        }
        Ok(Controller::Multi {
            nets,
            rule,
            temperature: DEFAULT_TEMPERATURE,
        })
    }

    pub fn id(&self) -> PolicyId {
        match self {
            Controller::Greedy { objective, .. } => PolicyId::Single(*objective),
            Controller::Multi { rule, .. } => PolicyId::Multi(*rule),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Controller::Greedy { net, .. } => net.input_dim(),
            Controller::Multi { nets, .. } => nets.values().next().map_or(0, Mlp::input_dim),
        }
    }

    pub fn decide(&self, obs: &Observation, tally: VoteTally, incumbent: Phase) -> Result<Decision> {
        match self {
            Controller::Greedy { objective, net } => {
                let q = net.forward(obs.as_slice())?;
                let action = select_action(&q, incumbent.action())?;
                Ok(Decision {
                    observation: obs.clone(),
                    tally,
                    weights: Weights {
                        w: BTreeMap::from([(*objective, 1.0)]),
                    },
                    per_objective: BTreeMap::from([(*objective, normalize_q(&q)?)]),
                    integrated: q,
                    incumbent,
                    action,
                })
            }
            Controller::Multi {
                nets,
                rule,
                temperature,
            } => {
                let weights = rule.weights(&tally);
                let mut per_objective = BTreeMap::new();
                for (id, net) in nets {
                    let q = net.forward(obs.as_slice())?;
                    per_objective.insert(*id, normalize_q_with_temperature(&q, *temperature)?);
                }
                let integrated = integrate(&per_objective, &weights)?;
                let action = select_action(&integrated, incumbent.action())?;
                Ok(Decision {
                    observation: obs.clone(),
                    tally,
                    weights,
                    per_objective,
                    integrated,
                    incumbent,
                    action,
                })
            }
        }
    }

    /// Observe, poll and decide on a live world.
    pub fn decide_world(&self, world: &SimWorld) -> Result<Decision> {
        self.decide(&world.observe(), world.poll_voters(), world.phase())
    }
}
