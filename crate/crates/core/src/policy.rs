//! From an optimal occupation measure to arbitration rules and capacities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctmdp::{Action, CtmdpModel};

/// Probability mass below which a state counts as unvisited.
pub const MASS_TOL: f64 = 1e-12;
/// Actions with probability above this count towards randomization.
pub const RANDOMIZATION_TOL: f64 = 1e-6;
pub const DEFAULT_EPSILON: f64 = 0.01;

/// Randomized stationary arbitration rule of one subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPolicy {
    pub subsystem: String,
    pub queue_ids: Vec<String>,
    /// Levels are truncated at these caps before lookup.
    pub caps: Vec<u32>,
    /// `rules[x]`: actions with positive probability in state `x`.
    pub rules: Vec<Vec<(Action, f64)>>,
}

impl StationaryPolicy {
    pub fn state_count(&self) -> usize {
        self.rules.len()
    }

    /// Mixed-radix index of the (truncated) levels, queue 0 least significant.
    pub fn state_of(&self, levels: impl IntoIterator<Item = u32>) -> usize {
        let mut index = 0;
        let mut stride = 1;
        for (n, &cap) in levels.into_iter().zip(&self.caps) {
            index += n.min(cap) as usize * stride;
            stride *= cap as usize + 1;
        }
        index
    }

    pub fn probability(&self, state: usize, action: Action) -> f64 {
        self.rules[state]
            .iter()
            .find(|(a, _)| *a == action)
            .map_or(0.0, |&(_, p)| p)
    }

    /// Inverse-CDF draw with `u` uniform on `[0, 1)`.
    pub fn choose(&self, state: usize, u: f64) -> Action {
        let rule = &self.rules[state];
        let mut acc = 0.0;
        for &(a, p) in rule {
            acc += p;
            if u < acc {
                return a;
            }
        }
        rule.last().expect("every state has an action").0
    }

    /// States with two or more actions above [`RANDOMIZATION_TOL`].
    pub fn randomized_states(&self) -> usize {
        self.rules
            .iter()
            .filter(|r| r.iter().filter(|(_, p)| *p > RANDOMIZATION_TOL).count() >= 2)
            .count()
    }
}

/// Serve the longest nonempty queue, lowest index on ties; idle when empty.
pub fn longest_queue_action(levels: &[u32]) -> Action {
    let mut best: Option<(usize, u32)> = None;
    for (j, &n) in levels.iter().enumerate() {
        if n > 0 && best.map_or(true, |(_, b)| n > b) {
            best = Some((j, n));
        }
    }
    best.map_or(Action::Idle, |(j, _)| Action::Serve(j))
}

/// `pi(a|x) = z(x,a) / z(x)`; states with `z(x) <= MASS_TOL` get the
/// longest-queue rule.
pub fn extract_policy(model: &CtmdpModel, z: &[f64]) -> StationaryPolicy {
    let rules = (0..model.state_count())
        .map(|x| {
            let range = model.pair_range(x);
            let mass: f64 = range.clone().map(|k| z[k].max(0.0)).sum();
            if mass <= MASS_TOL {
                return vec![(longest_queue_action(&model.levels(x)), 1.0)];
            }
            range
                .filter(|&k| z[k] > 0.0)
                .map(|k| (model.pairs()[k].action, z[k] / mass))
                .collect()
        })
        .collect();
    StationaryPolicy {
        subsystem: model.subsystem.clone(),
        queue_ids: model.queue_ids.clone(),
        caps: model.caps.clone(),
        rules,
    }
}

/// `marginals[j][k]`: mass of states with queue `j` at level `k`.
pub fn occupancy_marginals(model: &CtmdpModel, z: &[f64]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = model.caps.iter().map(|&c| vec![0.0; c as usize + 1]).collect();
    for (k, pair) in model.pairs().iter().enumerate() {
        let v = z[k].max(0.0);
        if v == 0.0 {
            continue;
        }
        for (j, m) in out.iter_mut().enumerate() {
            m[model.level(pair.state, j) as usize] += v;
        }
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocError {
    #[error("budget {budget} is below the queue count {queues}")]
    BudgetBelowQueueCount { budget: u64, queues: usize },
    #[error("tail mass epsilon must lie in (0, 0.5], got {0}")]
    BadEpsilon(f64),
    #[error("{ids} queue ids but {marginals} marginals")]
    LengthMismatch { ids: usize, marginals: usize },
    #[error("queue {0} has no capacity in the allocation")]
    MissingQueue(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueCapacity {
    pub id: String,
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferAllocation {
    pub queues: Vec<QueueCapacity>,
    pub total: u64,
}

impl BufferAllocation {
    fn from_parts(ids: &[String], caps: &[u64]) -> Self {
        BufferAllocation {
            queues: ids
                .iter()
                .zip(caps)
                .map(|(id, &c)| QueueCapacity {
                    id: id.clone(),
                    capacity: c as u32,
                })
                .collect(),
            total: caps.iter().sum(),
        }
    }

    pub fn capacity(&self, id: &str) -> Option<u32> {
        self.queues.iter().find(|q| q.id == id).map(|q| q.capacity)
    }

    /// Capacities in the order of `ids`.
    pub fn capacities_for(&self, ids: &[String]) -> Result<Vec<u32>, AllocError> {
        ids.iter()
            .map(|id| self.capacity(id).ok_or_else(|| AllocError::MissingQueue(id.clone())))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("allocation serializes")
    }
}

/// Smallest `k >= 1` whose cumulative mass reaches `1 - eps`; the top level
/// if round-off keeps the sum short.
pub fn requested_capacity(marginal: &[f64], eps: f64) -> u32 {
    let mut acc = 0.0;
    for (k, &p) in marginal.iter().enumerate() {
        acc += p;
        if acc >= 1.0 - eps {
            return (k as u32).max(1);
        }
    }
    (marginal.len().saturating_sub(1) as u32).max(1)
}

/// `P(n >= c)` with a geometric continuation past the top level, ratio
/// `p_L / p_{L-1}` clamped to `[0, 0.99]`.
fn tail_mass(marginal: &[f64], c: u64) -> f64 {
    let top = marginal.len() - 1;
    if (c as usize) <= top {
        return marginal[c as usize..].iter().sum();
    }
    let p_top = marginal[top];
    let theta = if top == 0 || marginal[top - 1] <= 0.0 {
        0.0
    } else {
        (p_top / marginal[top - 1]).clamp(0.0, 0.99)
    };
    p_top * theta.powi((c as usize - top).min(i32::MAX as usize) as i32)
}

fn check_budget(budget: u64, queues: usize) -> Result<(), AllocError> {
    if budget < queues as u64 || queues == 0 {
        return Err(AllocError::BudgetBelowQueueCount { budget, queues });
    }
    Ok(())
}

/// Hands out `budget - m` units one at a time on top of a floor of 1,
/// always to the queue with the highest `priority(caps, j)` (lowest
/// capacity, then lowest index, on ties). Every budget's allocation extends
/// the previous one, so capacities never shrink as the budget grows.
fn greedy<P>(m: usize, budget: u64, mut priority: P) -> Vec<u64>
where
    P: FnMut(&[u64], usize) -> f64,
{
    let mut caps = vec![1u64; m];
    for _ in m as u64..budget {
        let mut best = 0;
        let mut best_key = priority(&caps, 0);
        for j in 1..m {
            let key = priority(&caps, j);
            if key > best_key || (key == best_key && caps[j] < caps[best]) {
                best = j;
                best_key = key;
            }
        }
        caps[best] += 1;
    }
    caps
}

/// Capacities from per-queue occupancy marginals.
///
/// Each queue requests its `(1 - eps)` occupancy quantile (at least 1).
/// Until the summed request is reached, units go by the divisor rule
/// `request / (capacity + 1)`, which never lifts a queue past its request;
/// after that, each unit goes to the queue with the largest residual tail
/// mass `P(n >= capacity)`. The result sums to `budget` exactly.
pub fn size_buffers(
    ids: &[String],
    marginals: &[Vec<f64>],
    budget: u64,
    eps: f64,
) -> Result<BufferAllocation, AllocError> {
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(AllocError::BadEpsilon(eps));
    }
    if ids.len() != marginals.len() {
        return Err(AllocError::LengthMismatch {
            ids: ids.len(),
            marginals: marginals.len(),
        });
    }
    check_budget(budget, ids.len())?;
    let requested: Vec<u64> = marginals
        .iter()
        .map(|m| requested_capacity(m, eps) as u64)
        .collect();
    let total_requested: u64 = requested.iter().sum();
    let caps = greedy(ids.len(), budget, |caps, j| {
        if caps.iter().sum::<u64>() < total_requested {
            requested[j] as f64 / (caps[j] + 1) as f64
        } else {
            tail_mass(&marginals[j], caps[j])
        }
    });
    Ok(BufferAllocation::from_parts(ids, &caps))
}

/// `budget` split evenly; the first `budget mod m` queues get one extra.
pub fn equal_allocation(ids: &[String], budget: u64) -> Result<BufferAllocation, AllocError> {
    check_budget(budget, ids.len())?;
    let m = ids.len() as u64;
    let caps: Vec<u64> = (0..m)
        .map(|j| budget / m + u64::from(j < budget % m))
        .collect();
    Ok(BufferAllocation::from_parts(ids, &caps))
}

/// Floor of 1, the rest apportioned by arrival rate with the divisor rule.
pub fn proportional_allocation(
    ids: &[String],
    rates: &[f64],
    budget: u64,
) -> Result<BufferAllocation, AllocError> {
    check_budget(budget, ids.len())?;
    let caps = greedy(ids.len(), budget, |caps, j| rates[j] / (caps[j] + 1) as f64);
    Ok(BufferAllocation::from_parts(ids, &caps))
}
