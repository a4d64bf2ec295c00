//! Split plan to CTMDP models, occupation measures, policies and capacities.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::ctmdp::{build_model, choose_caps, limit_caps, CtmdpModel, DEFAULT_MAX_LEVEL};
use crate::lp::{
    formulate, randomized_states, solve_occupation, verify_measure, PivotRule, SimplexOptions,
    StackedLp,
};
use crate::policy::{
    extract_policy, occupancy_marginals, size_buffers, BufferAllocation, StationaryPolicy,
    DEFAULT_EPSILON,
};
use crate::split::SplitPlan;

/// Largest per-subsystem model the pipeline builds after [`limit_caps`].
pub const DEFAULT_STATE_LIMIT: usize = 1100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveSettings {
    pub epsilon: f64,
    pub max_level: u32,
    pub state_limit: usize,
    /// Entering rule of every solve. Bland by default; the Dantzig hybrid
    /// needs far fewer pivots once a budget row binds.
    #[serde(default = "default_pivot")]
    pub pivot: PivotRule,
}

fn default_pivot() -> PivotRule {
    PivotRule::Bland
}

impl Default for SolveSettings {
    fn default() -> Self {
        SolveSettings {
            epsilon: DEFAULT_EPSILON,
            max_level: DEFAULT_MAX_LEVEL,
            state_limit: DEFAULT_STATE_LIMIT,
            pivot: default_pivot(),
        }
    }
}

/// Weights proportional to each subsystem's offered load, raised so every
/// subsystem's share of `budget` covers its queue count.
pub fn initial_weights(plan: &SplitPlan, budget: u64) -> Vec<f64> {
    let loads: Vec<f64> = plan.subsystems.iter().map(|s| s.total_arrival_rate()).collect();
    let total: f64 = loads.iter().sum();
    let raw: Vec<f64> = if total > 0.0 {
        loads.iter().map(|l| l / total).collect()
    } else {
        vec![1.0 / loads.len() as f64; loads.len()]
    };
    floor_weights(plan, budget, &raw)
}

/// Enforces `w_s * budget >= m_s` and renormalizes the rest.
pub fn floor_weights(plan: &SplitPlan, budget: u64, raw: &[f64]) -> Vec<f64> {
    let floors: Vec<f64> = plan
        .subsystems
        .iter()
        .map(|s| s.queues.len() as f64 / budget as f64)
        .collect();
    let mut w = raw.to_vec();
    // Each pass pins at least one more subsystem at its floor.
    for _ in 0..w.len() {
        let pinned: Vec<bool> = w.iter().zip(&floors).map(|(x, f)| x <= f).collect();
        let pinned_mass: f64 = floors.iter().zip(&pinned).filter(|p| *p.1).map(|p| p.0).sum();
        let free_raw: f64 = raw.iter().zip(&pinned).filter(|p| !*p.1).map(|p| p.0).sum();
        let next: Vec<f64> = (0..w.len())
            .map(|s| {
                if pinned[s] {
                    floors[s]
                } else if free_raw > 0.0 {
                    raw[s] / free_raw * (1.0 - pinned_mass)
                } else {
                    0.0
                }
            })
            .collect();
        if next == w {
            break;
        }
        w = next;
    }
    w
}

/// Models with uniform caps `min(max_level, share - (m - 1))`, lowered to
/// fit the state limit.
pub fn build_models(
    plan: &SplitPlan,
    budget: u64,
    weights: &[f64],
    settings: &SolveSettings,
) -> Result<Vec<CtmdpModel>, HarnessError> {
    plan.subsystems
        .iter()
        .zip(weights)
        .map(|(sub, &w)| {
            let share = (w * budget as f64 + 1e-9).floor() as u64;
            let caps = choose_caps(sub, share, settings.max_level)?;
            let caps = limit_caps(&caps, settings.state_limit);
            Ok(build_model(sub, &caps)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemSolution {
    pub subsystem: String,
    pub caps: Vec<u32>,
    pub states: usize,
    /// Right-hand side of the occupancy row.
    pub occupancy_budget: f64,
    /// Expected occupancy under the optimal measure.
    pub occupancy: f64,
    pub loss_rate: f64,
    pub budget_binding: bool,
    pub randomized_states: usize,
    pub max_balance_residual: f64,
    pub policy: StationaryPolicy,
    pub marginals: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtmdpPlan {
    pub weights: Vec<f64>,
    pub subsystems: Vec<SubsystemSolution>,
    pub allocation: BufferAllocation,
    /// Model loss rate summed over subsystems.
    pub objective: f64,
}

impl CtmdpPlan {
    pub fn policies(&self) -> Vec<StationaryPolicy> {
        self.subsystems.iter().map(|s| s.policy.clone()).collect()
    }
}

/// Model identity for caching: queue ids, rates, service rate and caps.
fn model_key(model: &CtmdpModel) -> String {
    format!(
        "{}|{:?}|{:?}|{:?}|{:?}",
        model.subsystem, model.queue_ids, model.arrival_rates, model.service_rate, model.caps
    )
}

fn expected_occupancy(model: &CtmdpModel, z: &[f64]) -> f64 {
    model
        .pairs()
        .iter()
        .zip(z)
        .map(|(p, v)| v * model.occupancy(p.state) as f64)
        .sum()
}

/// Budget-free optima keyed by model. A budget-free optimum that fits a
/// later budget row is optimal there too, so entries depend on the model
/// alone and lookups are order independent.
#[derive(Debug, Default, Clone)]
pub struct SolutionCache {
    free: Arc<Mutex<HashMap<String, Arc<Vec<f64>>>>>,
}

impl SolutionCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn free_optimum(&self, model: &CtmdpModel, opts: &SimplexOptions) -> Result<Arc<Vec<f64>>, HarnessError> {
        // Tied optima may differ by rule, so the rule is part of the key.
        let key = format!("{:?} {}", opts.rule, model_key(model));
        if let Some(z) = self.free.lock().expect("cache lock").get(&key) {
            return Ok(z.clone());
        }
        // Every state's occupancy is at most the sum of caps.
        let ceiling: u64 = model.caps.iter().map(|&c| c as u64).sum::<u64>() + 1;
        let stacked = formulate(std::slice::from_ref(model), ceiling, &[1.0]);
        let m = solve_occupation(&stacked, opts)?;
        let z = Arc::new(m.z.into_iter().next().expect("one block"));
        self.free
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert(z.clone());
        Ok(z)
    }
}

/// Solves every subsystem, extracts policies and sizes the buffers.
pub fn solve_plan(
    plan: &SplitPlan,
    budget: u64,
    weights: &[f64],
    settings: &SolveSettings,
    cache: &SolutionCache,
) -> Result<CtmdpPlan, HarnessError> {
    let opts = SimplexOptions {
        rule: settings.pivot,
        ..Default::default()
    };
    let models = build_models(plan, budget, weights, settings)?;
    let rhs: Vec<f64> = weights.iter().map(|w| w * budget as f64).collect();

    let mut z: Vec<Option<Vec<f64>>> = vec![None; models.len()];
    let mut constrained = Vec::new();
    for (s, model) in models.iter().enumerate() {
        let free = cache.free_optimum(model, &opts)?;
        if expected_occupancy(model, &free) <= rhs[s] {
            z[s] = Some(free.as_ref().clone());
        } else {
            constrained.push(s);
        }
    }
    // Budget rows are per subsystem, so the stacked program is block
    // diagonal and each block solves alone.
    for s in constrained {
        let stacked: StackedLp = formulate(std::slice::from_ref(&models[s]), budget, &weights[s..=s]);
        let m = solve_occupation(&stacked, &opts)?;
        z[s] = m.z.into_iter().next();
    }

    let mut subsystems = Vec::with_capacity(models.len());
    let mut ids = Vec::new();
    let mut marginals_all = Vec::new();
    for (s, model) in models.iter().enumerate() {
        let zs = z[s].take().expect("solved");
        let report = verify_measure(model, &zs, Some(rhs[s]))?;
        let occupancy = expected_occupancy(model, &zs);
        let loss_rate: f64 = model.pairs().iter().zip(&zs).map(|(p, v)| p.cost * v).sum();
        let marginals = occupancy_marginals(model, &zs);
        ids.extend(model.queue_ids.iter().cloned());
        marginals_all.extend(marginals.iter().cloned());
        subsystems.push(SubsystemSolution {
            subsystem: model.subsystem.clone(),
            caps: model.caps.clone(),
            states: model.state_count(),
            occupancy_budget: rhs[s],
            occupancy,
            loss_rate,
            budget_binding: occupancy >= rhs[s] - 1e-7,
            randomized_states: randomized_states(model, &zs, crate::lp::SUPPORT_TOL),
            max_balance_residual: report.max_balance_residual,
            policy: extract_policy(model, &zs),
            marginals,
        });
    }
    let allocation = size_buffers(&ids, &marginals_all, budget, settings.epsilon)?;
    let objective = subsystems.iter().map(|s| s.loss_rate).sum();
    Ok(CtmdpPlan {
        weights: weights.to_vec(),
        subsystems,
        allocation,
        objective,
    })
}
