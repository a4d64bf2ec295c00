//! The experiment loop: baselines, CTMDP sizing, resimulation, re-weighting
//! and the budget sweep.
//!
//! For every `(budget, seed)` the loop runs `iterations` rounds. Round `i`
//! simulates with seed [`round_seed`]`(seed, i)`, so every round sees fresh
//! traffic while all policies within a round see identical arrivals. After
//! each round the budget weights move halfway towards the subsystems'
//! observed shares of the CTMDP run's losses.

mod pipeline;
mod summary;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchError, Architecture, UnreachableError};
use crate::ctmdp::ModelError;
use crate::lp::LpError;
use crate::policy::{equal_allocation, proportional_allocation, AllocError, BufferAllocation};
use crate::sim::{simulate, Horizon, Policy, SimConfig, SimError, SimulationReport};
use crate::split::{split_with_rates, SplitPlan};

pub use pipeline::{
    build_models, floor_weights, initial_weights, solve_plan, CtmdpPlan, SolutionCache,
    SolveSettings, SubsystemSolution, DEFAULT_STATE_LIMIT,
};
pub use summary::{summarize, Summary};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Route(#[from] UnreachableError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid experiment: {0}")]
    Spec(String),
}

impl HarnessError {
    /// Solver or model-size trouble, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            HarnessError::Lp(_) | HarnessError::Model(ModelError::TooLarge { .. })
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Constant equal split with FCFS arbitration: the "pre" reference.
    Equal,
    /// Constant split by traffic ratio with FCFS arbitration.
    Proportional,
    /// Equal split, FCFS with the calibrated timeout.
    Timeout,
    /// CTMDP capacities and arbitration: the "post" run.
    Ctmdp,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Equal, Arm::Proportional, Arm::Timeout, Arm::Ctmdp];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Equal => "equal",
            Arm::Proportional => "proportional",
            Arm::Timeout => "timeout",
            Arm::Ctmdp => "ctmdp",
        }
    }

    pub fn phase(self) -> &'static str {
        if self == Arm::Ctmdp {
            "post"
        } else {
            "pre"
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub budgets: Vec<u64>,
    pub iterations: u32,
    pub seeds: Vec<u64>,
    pub settings: SolveSettings,
    pub horizon: Horizon,
    /// Baseline arms to run next to the CTMDP arm.
    pub baselines: Vec<Arm>,
    /// Per-processor loss weights for a weighted aggregate; uniform if empty.
    #[serde(default)]
    pub loss_weights: BTreeMap<String, f64>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            budgets: vec![160, 320, 640],
            iterations: 10,
            seeds: vec![1],
            settings: SolveSettings::default(),
            horizon: Horizon::Time(20_000.0),
            baselines: vec![Arm::Equal, Arm::Proportional, Arm::Timeout],
            loss_weights: BTreeMap::new(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Spec(m.to_string()));
        if self.budgets.is_empty() || self.budgets.contains(&0) {
            return bad("budgets must be a nonempty list of positive integers");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return bad("seeds must be distinct");
        }
        if self.baselines.contains(&Arm::Ctmdp) {
            return bad("the CTMDP arm is not a baseline");
        }
        if self.loss_weights.values().any(|w| !(*w >= 0.0)) {
            return bad("loss weights must be nonnegative");
        }
        Ok(())
    }

    fn arms(&self) -> Vec<Arm> {
        let mut arms: Vec<Arm> = self.baselines.clone();
        // Timeout calibration needs the equal FCFS run.
        if arms.contains(&Arm::Timeout) && !arms.contains(&Arm::Equal) {
            arms.push(Arm::Equal);
        }
        arms.push(Arm::Ctmdp);
        arms.sort();
        arms.dedup();
        arms
    }
}

/// Seed of round `iteration`; round 0 uses `seed` itself.
pub fn round_seed(seed: u64, iteration: u32) -> u64 {
    seed.wrapping_add((iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub budget: u64,
    pub seed: u64,
    pub iteration: u32,
    pub arm: Arm,
    pub phase: String,
    pub sim_seed: u64,
    pub allocation: Option<BufferAllocation>,
    pub threshold: Option<f64>,
    pub report: Option<SimulationReport>,
    /// Failure marker; the report is absent when set.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightStep {
    pub budget: u64,
    pub seed: u64,
    pub iteration: u32,
    pub weights: Vec<f64>,
    /// Model loss rate of the stacked program.
    pub objective: f64,
    pub randomized_states: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub budget: u64,
    pub baseline: Arm,
    pub baseline_mean_loss: f64,
    pub ctmdp_mean_loss: f64,
    /// `100 * (baseline - ctmdp) / baseline`; absent when the baseline is 0.
    pub percent: Option<f64>,
    /// Seeds whose round-averaged CTMDP loss is below the baseline's.
    pub seeds_improved: usize,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedSign {
    pub budget: u64,
    pub seed: u64,
    pub aggregate_improved: bool,
    /// Processors whose round-averaged loss rose against the equal baseline.
    pub worsened: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub budget: u64,
    pub arm: Arm,
    pub runs: usize,
    pub mean_loss: f64,
    pub stddev_loss: f64,
    pub mean_weighted_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub architecture: String,
    pub subsystems: Vec<String>,
    pub processors: Vec<String>,
    pub cells: Vec<Cell>,
    pub weight_trace: Vec<WeightStep>,
    pub improvements: Vec<Improvement>,
    pub mixed_sign: Vec<MixedSign>,
    pub replication: Vec<Replication>,
    pub notices: Vec<String>,
}

impl ExperimentResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn reports(&self, budget: u64, arm: Arm) -> impl Iterator<Item = &Cell> {
        self.cells
            .iter()
            .filter(move |c| c.budget == budget && c.arm == arm)
    }

    /// Mean aggregate loss rate over every successful run of an arm.
    pub fn mean_loss(&self, budget: u64, arm: Arm) -> Option<f64> {
        let v: Vec<f64> = self
            .reports(budget, arm)
            .filter_map(|c| c.report.as_ref().map(|r| r.aggregate_loss_rate))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Round-averaged aggregate loss of one seed.
    pub fn seed_loss(&self, budget: u64, seed: u64, arm: Arm) -> Option<f64> {
        let v: Vec<f64> = self
            .reports(budget, arm)
            .filter(|c| c.seed == seed)
            .filter_map(|c| c.report.as_ref().map(|r| r.aggregate_loss_rate))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }
}

struct Rounds {
    cells: Vec<Cell>,
    trace: Vec<WeightStep>,
}

fn subsystem_losses(plan: &SplitPlan, report: &SimulationReport) -> Vec<f64> {
    plan.subsystems
        .iter()
        .map(|s| {
            s.queues
                .iter()
                .filter_map(|q| report.queue(&q.id))
                .map(|q| q.lost as f64)
                .sum()
        })
        .collect()
}

fn run_rounds(
    arch: &Architecture,
    plan: &SplitPlan,
    spec: &ExperimentSpec,
    budget: u64,
    seed: u64,
    cache: &SolutionCache,
) -> Rounds {
    let arms = spec.arms();
    let ids = plan.queue_ids();
    let rates: Vec<f64> = plan.queues().map(|q| q.arrival_rate).collect();
    let mut weights = initial_weights(plan, budget);
    let mut cells = Vec::new();
    let mut trace = Vec::new();
    let equal = equal_allocation(&ids, budget);
    let proportional = proportional_allocation(&ids, &rates, budget);

    for iteration in 0..spec.iterations {
        let sim_seed = round_seed(seed, iteration);
        let cell = |arm: Arm| Cell {
            budget,
            seed,
            iteration,
            arm,
            phase: arm.phase().to_string(),
            sim_seed,
            allocation: None,
            threshold: None,
            report: None,
            error: None,
        };
        let run = |mut c: Cell, alloc: Result<BufferAllocation, String>, policy: Policy| {
            match alloc.and_then(|a| {
                c.allocation = Some(a.clone());
                let cfg = SimConfig::new(a, policy, spec.horizon, sim_seed);
                simulate(arch, &cfg).map_err(|e| e.to_string())
            }) {
                Ok(r) => c.report = Some(r),
                Err(e) => c.error = Some(e),
            }
            c
        };
        let mut round: Vec<Cell> = Vec::new();
        let mut equal_report: Option<SimulationReport> = None;
        for &arm in &arms {
            let c = match arm {
                Arm::Equal => {
                    let c = run(cell(arm), equal.clone().map_err(|e| e.to_string()), Policy::Fcfs);
                    equal_report = c.report.clone();
                    c
                }
                Arm::Proportional => run(
                    cell(arm),
                    proportional.clone().map_err(|e| e.to_string()),
                    Policy::Fcfs,
                ),
                Arm::Timeout => {
                    // The calibration run is the equal FCFS run itself.
                    let threshold = equal_report
                        .as_ref()
                        .map(|r| r.mean_wait)
                        .filter(|t| *t > 0.0);
                    match threshold {
                        Some(t) => {
                            let mut c = run(
                                cell(arm),
                                equal.clone().map_err(|e| e.to_string()),
                                Policy::Timeout { threshold: t },
                            );
                            c.threshold = Some(t);
                            c
                        }
                        None => Cell {
                            error: Some(SimError::NothingServed.to_string()),
                            ..cell(arm)
                        },
                    }
                }
                Arm::Ctmdp => match solve_plan(plan, budget, &weights, &spec.settings, cache) {
                    Ok(p) => {
                        trace.push(WeightStep {
                            budget,
                            seed,
                            iteration,
                            weights: weights.clone(),
                            objective: p.objective,
                            randomized_states: p
                                .subsystems
                                .iter()
                                .map(|s| s.randomized_states)
                                .collect(),
                        });
                        run(
                            cell(arm),
                            Ok(p.allocation.clone()),
                            Policy::Ctmdp {
                                policies: p.policies(),
                            },
                        )
                    }
                    Err(e) => Cell {
                        error: Some(e.to_string()),
                        ..cell(arm)
                    },
                },
            };
            round.push(c);
        }

        if let Some(post) = round
            .iter()
            .find(|c| c.arm == Arm::Ctmdp)
            .and_then(|c| c.report.as_ref())
        {
            let losses = subsystem_losses(plan, post);
            let total: f64 = losses.iter().sum();
            if total > 0.0 {
                let mixed: Vec<f64> = weights
                    .iter()
                    .zip(&losses)
                    .map(|(w, l)| 0.5 * w + 0.5 * l / total)
                    .collect();
                weights = floor_weights(plan, budget, &mixed);
            }
        }
        cells.extend(round);
    }
    Rounds { cells, trace }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn weighted_loss(report: &SimulationReport, weights: &BTreeMap<String, f64>) -> f64 {
    let w = |id: &str| {
        if weights.is_empty() {
            1.0
        } else {
            weights.get(id).copied().unwrap_or(0.0)
        }
    };
    let (num, den) = report.processors.iter().fold((0.0, 0.0), |(n, d), p| {
        (n + w(&p.id) * p.lost as f64, d + w(&p.id) * p.arrivals as f64)
    });
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Round-averaged per-processor loss rates of one seed and arm.
fn processor_means(result_cells: &[Cell], budget: u64, seed: u64, arm: Arm) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for c in result_cells
        .iter()
        .filter(|c| c.budget == budget && c.seed == seed && c.arm == arm)
    {
        if let Some(r) = &c.report {
            for p in &r.processors {
                let e = sums.entry(p.id.clone()).or_insert((0.0, 0));
                e.0 += p.loss_rate;
                e.1 += 1;
            }
        }
    }
    sums.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}

/// Runs the whole grid. Independent `(budget, seed)` tasks run on the rayon
/// pool; results are put in canonical order before aggregation.
pub fn run_experiment(
    arch: &Architecture,
    spec: &ExperimentSpec,
) -> Result<ExperimentResult, HarnessError> {
    spec.validate()?;
    for &b in &spec.budgets {
        if b < arch.queue_count() as u64 {
            return Err(ArchError::BudgetBelowQueueCount {
                budget: b,
                queues: arch.queue_count(),
            }
            .into());
        }
    }
    let plan = split_with_rates(arch)?;
    let cache = SolutionCache::new();
    let tasks: Vec<(u64, u64)> = spec
        .budgets
        .iter()
        .flat_map(|&b| spec.seeds.iter().map(move |&s| (b, s)))
        .collect();
    let rounds: Vec<Rounds> = tasks
        .par_iter()
        .map(|&(b, s)| run_rounds(arch, &plan, spec, b, s, &cache))
        .collect();
    let mut cells: Vec<Cell> = Vec::new();
    let mut weight_trace = Vec::new();
    for r in rounds {
        cells.extend(r.cells);
        weight_trace.extend(r.trace);
    }
    cells.sort_by(|a, b| {
        (a.budget, a.seed, a.iteration, a.arm).cmp(&(b.budget, b.seed, b.iteration, b.arm))
    });
    weight_trace.sort_by(|a, b| (a.budget, a.seed, a.iteration).cmp(&(b.budget, b.seed, b.iteration)));

    let mut result = ExperimentResult {
        spec: spec.clone(),
        architecture: arch.to_json(),
        subsystems: plan.subsystems.iter().map(|s| s.id.clone()).collect(),
        processors: arch.processors.iter().map(|p| p.id.clone()).collect(),
        cells,
        weight_trace,
        improvements: Vec::new(),
        mixed_sign: Vec::new(),
        replication: Vec::new(),
        notices: Vec::new(),
    };
    aggregate(&mut result);
    Ok(result)
}

fn aggregate(result: &mut ExperimentResult) {
    let spec = result.spec.clone();
    let arms = spec.arms();
    for &budget in &spec.budgets {
        for &arm in &arms {
            let runs: Vec<&SimulationReport> = result
                .reports(budget, arm)
                .filter_map(|c| c.report.as_ref())
                .collect();
            let losses: Vec<f64> = runs.iter().map(|r| r.aggregate_loss_rate).collect();
            let weighted: Vec<f64> = runs
                .iter()
                .map(|r| weighted_loss(r, &spec.loss_weights))
                .collect();
            let (mean, sd) = mean_std(&losses);
            result.replication.push(Replication {
                budget,
                arm,
                runs: runs.len(),
                mean_loss: mean,
                stddev_loss: sd,
                mean_weighted_loss: mean_std(&weighted).0,
            });
        }
        for &base in arms.iter().filter(|a| **a != Arm::Ctmdp) {
            let (Some(b), Some(c)) = (result.mean_loss(budget, base), result.mean_loss(budget, Arm::Ctmdp)) else {
                continue;
            };
            let improved = spec
                .seeds
                .iter()
                .filter(|&&s| {
                    matches!(
                        (result.seed_loss(budget, s, base), result.seed_loss(budget, s, Arm::Ctmdp)),
                        (Some(x), Some(y)) if y < x
                    )
                })
                .count();
            result.improvements.push(Improvement {
                budget,
                baseline: base,
                baseline_mean_loss: b,
                ctmdp_mean_loss: c,
                percent: (b > 0.0).then(|| 100.0 * (b - c) / b),
                seeds_improved: improved,
                seeds: spec.seeds.len(),
            });
        }
        if arms.contains(&Arm::Equal) {
            for &seed in &spec.seeds {
                let pre = processor_means(&result.cells, budget, seed, Arm::Equal);
                let post = processor_means(&result.cells, budget, seed, Arm::Ctmdp);
                let (Some(a), Some(b)) = (
                    result.seed_loss(budget, seed, Arm::Equal),
                    result.seed_loss(budget, seed, Arm::Ctmdp),
                ) else {
                    continue;
                };
                let worsened = result
                    .processors
                    .iter()
                    .filter(|p| matches!((pre.get(*p), post.get(*p)), (Some(x), Some(y)) if y > x))
                    .cloned()
                    .collect();
                result.mixed_sign.push(MixedSign {
                    budget,
                    seed,
                    aggregate_improved: b < a,
                    worsened,
                });
            }
        }
    }

    let failures = result.failures();
    if failures > 0 {
        result
            .notices
            .push(format!("{failures} cell(s) failed; see the error field of each cell"));
    }
    for &budget in &spec.budgets {
        let seeds: Vec<&MixedSign> = result.mixed_sign.iter().filter(|m| m.budget == budget).collect();
        if seeds.is_empty() {
            continue;
        }
        let mixed = seeds
            .iter()
            .filter(|m| m.aggregate_improved && !m.worsened.is_empty())
            .count();
        if 2 * mixed < seeds.len() {
            result.notices.push(format!(
                "budget {budget}: a processor lost more while the aggregate improved in only {mixed} of {} seeds",
                seeds.len()
            ));
        }
    }
}
