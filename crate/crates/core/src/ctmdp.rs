//! Finite constrained CTMDP of one subsystem.
//!
//! States are occupancy vectors `n` with `0 <= n_j <= cap_j`, encoded in mixed
//! radix with queue 0 as the least significant digit. Each state offers
//! `idle` plus `serve j` for every nonempty queue. Arrivals to a full queue
//! are lost: they contribute to the cost rate but produce no transition.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::split::Subsystem;

/// Default per-queue level cap.
pub const DEFAULT_MAX_LEVEL: u32 = 8;
/// Default ceiling on the number of states of a single model.
pub const DEFAULT_STATE_CEILING: usize = 200_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model for subsystem \"{subsystem}\" has {states} states, above the ceiling of {ceiling}; use a smaller --max-level")]
    TooLarge {
        subsystem: String,
        states: usize,
        ceiling: usize,
    },
    #[error("subsystem \"{subsystem}\" has {queues} queues but a budget of {budget}")]
    InfeasibleBudget {
        subsystem: String,
        queues: usize,
        budget: u64,
    },
    #[error("level caps must be >= 1 and match the queue count")]
    BadCaps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Idle,
    Serve(usize),
}

/// A state-action pair and the slice of the generator that belongs to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub state: usize,
    pub action: Action,
    /// Cost rate `c(x, a)`: expected loss per time unit.
    pub cost: f64,
    /// Total outflow rate, i.e. `-q(x, a, x)`.
    pub out_rate: f64,
    trans_start: usize,
    trans_end: usize,
}

#[derive(Debug, Clone)]
pub struct CtmdpModel {
    pub subsystem: String,
    pub queue_ids: Vec<String>,
    pub arrival_rates: Vec<f64>,
    pub service_rate: f64,
    pub caps: Vec<u32>,
    strides: Vec<usize>,
    state_count: usize,
    /// `pair_offsets[x]..pair_offsets[x + 1]` indexes the pairs of state `x`.
    pair_offsets: Vec<usize>,
    pairs: Vec<Pair>,
    transitions: Vec<(usize, f64)>,
}

impl CtmdpModel {
    pub fn queue_count(&self) -> usize {
        self.caps.len()
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    /// Range of pair indices belonging to `state`.
    pub fn pair_range(&self, state: usize) -> std::ops::Range<usize> {
        self.pair_offsets[state]..self.pair_offsets[state + 1]
    }

    /// Off-diagonal generator entries `(y, q(x, a, y))` of a pair.
    pub fn transitions(&self, pair: usize) -> &[(usize, f64)] {
        let p = &self.pairs[pair];
        &self.transitions[p.trans_start..p.trans_end]
    }

    pub fn level(&self, state: usize, queue: usize) -> u32 {
        ((state / self.strides[queue]) % (self.caps[queue] as usize + 1)) as u32
    }

    pub fn levels(&self, state: usize) -> Vec<u32> {
        (0..self.queue_count()).map(|j| self.level(state, j)).collect()
    }

    pub fn state_index(&self, levels: &[u32]) -> usize {
        levels
            .iter()
            .zip(&self.strides)
            .map(|(&n, &s)| n as usize * s)
            .sum()
    }

    /// Total occupancy `occ(x)`.
    pub fn occupancy(&self, state: usize) -> u32 {
        (0..self.queue_count()).map(|j| self.level(state, j)).sum()
    }

    /// Offsets of the pair table, `state_count + 1` entries.
    pub fn pair_offsets(&self) -> &[usize] {
        &self.pair_offsets
    }

    /// Copy of the model keeping only the action `choose(state)` in each state.
    pub fn restrict(&self, mut choose: impl FnMut(usize) -> Action) -> CtmdpModel {
        let mut out = self.clone();
        out.pairs.clear();
        out.pair_offsets.clear();
        out.pair_offsets.push(0);
        for x in 0..self.state_count {
            let a = choose(x);
            let pair = self.pair_range(x)
                .map(|k| self.pairs[k])
                .find(|p| p.action == a)
                .expect("restricting to an action that is available");
            out.pairs.push(pair);
            out.pair_offsets.push(out.pairs.len());
        }
        out
    }
}

/// Enumerate states, actions, generator entries and costs.
pub fn build_model(sub: &Subsystem, caps: &[u32]) -> Result<CtmdpModel, ModelError> {
    build_model_with_ceiling(sub, caps, DEFAULT_STATE_CEILING)
}

pub fn build_model_with_ceiling(
    sub: &Subsystem,
    caps: &[u32],
    ceiling: usize,
) -> Result<CtmdpModel, ModelError> {
    let m = sub.queues.len();
    if caps.len() != m || m == 0 || caps.iter().any(|&c| c == 0) {
        return Err(ModelError::BadCaps);
    }
    let mut strides = Vec::with_capacity(m);
    let mut states: usize = 1;
    for &c in caps {
        strides.push(states);
        states = states
            .checked_mul(c as usize + 1)
            .filter(|&s| s <= ceiling)
            .ok_or_else(|| ModelError::TooLarge {
                subsystem: sub.id.clone(),
                states: caps.iter().fold(1usize, |acc, &c| acc.saturating_mul(c as usize + 1)),
                ceiling,
            })?;
    }

    let rates: Vec<f64> = sub.queues.iter().map(|q| q.arrival_rate).collect();
    let mu = sub.service_rate;
    let mut pair_offsets = Vec::with_capacity(states + 1);
    let mut pairs = Vec::with_capacity(states * 2);
    let mut transitions = Vec::new();
    let mut levels = vec![0u32; m];
    pair_offsets.push(0);
    for x in 0..states {
        let mut rem = x;
        for j in 0..m {
            levels[j] = (rem % (caps[j] as usize + 1)) as u32;
            rem /= caps[j] as usize + 1;
        }
        // Folded from +0.0: an empty float `sum` is -0.0.
        let cost = (0..m)
            .filter(|&j| levels[j] == caps[j])
            .fold(0.0, |acc, j| acc + rates[j]);
        let actions = std::iter::once(Action::Idle)
            .chain((0..m).filter(|&j| levels[j] > 0).map(Action::Serve));
        for action in actions {
            let start = transitions.len();
            let mut out_rate = 0.0;
            for j in 0..m {
                if levels[j] < caps[j] && rates[j] > 0.0 {
                    transitions.push((x + strides[j], rates[j]));
                    out_rate += rates[j];
                }
            }
            if let Action::Serve(j) = action {
                transitions.push((x - strides[j], mu));
                out_rate += mu;
            }
            pairs.push(Pair {
                state: x,
                action,
                cost,
                out_rate,
                trans_start: start,
                trans_end: transitions.len(),
            });
        }
        pair_offsets.push(pairs.len());
    }

    Ok(CtmdpModel {
        subsystem: sub.id.clone(),
        queue_ids: sub.queues.iter().map(|q| q.id.clone()).collect(),
        arrival_rates: rates,
        service_rate: mu,
        caps: caps.to_vec(),
        strides,
        state_count: states,
        pair_offsets,
        pairs,
        transitions,
    })
}

/// Uniform per-queue cap: `min(max_level, budget - (m - 1))`.
pub fn choose_caps(
    sub: &Subsystem,
    subsystem_budget: u64,
    max_level: u32,
) -> Result<Vec<u32>, ModelError> {
    let m = sub.queues.len();
    if subsystem_budget < m as u64 || m == 0 || max_level == 0 {
        return Err(ModelError::InfeasibleBudget {
            subsystem: sub.id.clone(),
            queues: m,
            budget: subsystem_budget,
        });
    }
    let by_budget = subsystem_budget - (m as u64 - 1);
    let cap = (max_level as u64).min(by_budget) as u32;
    Ok(vec![cap; m])
}

/// Lowers uniform caps until the state count fits `state_limit` (never below 1).
pub fn limit_caps(caps: &[u32], state_limit: usize) -> Vec<u32> {
    let mut cap = caps.iter().copied().max().unwrap_or(1);
    let count = |c: u32| {
        caps.iter()
            .fold(1usize, |acc, &k| acc.saturating_mul(k.min(c) as usize + 1))
    };
    while cap > 1 && count(cap) > state_limit {
        cap -= 1;
    }
    caps.iter().map(|&k| k.min(cap)).collect()
}
