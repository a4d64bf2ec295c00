use serde::Serialize;

use super::program::StackedLp;
use super::simplex::{solve_lp_from, LpError, SimplexOptions};
use crate::ctmdp::CtmdpModel;

/// Threshold above which a state-action frequency counts as "used".
pub const SUPPORT_TOL: f64 = 1e-9;

/// Optimal occupation measure of a stacked program.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupationMeasure {
    /// `z[s][k]` for pair `k` of subsystem `s`'s model.
    pub z: Vec<Vec<f64>>,
    /// Total expected loss rate.
    pub objective_value: f64,
    pub iterations: usize,
}

impl OccupationMeasure {
    /// Per-state mass `sum_a z(x, a)` of one subsystem.
    pub fn state_mass(&self, model: &CtmdpModel, block: usize) -> Vec<f64> {
        (0..model.state_count())
            .map(|x| model.pair_range(x).map(|k| self.z[block][k]).sum())
            .collect()
    }
}

pub fn solve_occupation(
    stacked: &StackedLp,
    opts: &SimplexOptions,
) -> Result<OccupationMeasure, LpError> {
    let sol = solve_lp_from(&stacked.lp, opts, &stacked.crash_basis)?;
    let z = stacked
        .blocks
        .iter()
        .map(|b| sol.x[b.var_offset..b.var_offset + b.var_count].to_vec())
        .collect();
    Ok(OccupationMeasure {
        z,
        objective_value: sol.objective,
        iterations: sol.iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualReport {
    /// `max_y |sum_{x,a} z(x,a) q(x,a,y)|` with the diagonal included.
    pub max_balance_residual: f64,
    pub normalization_residual: f64,
    pub min_value: f64,
    /// `budget - sum z occ`; `None` when no budget was given.
    pub budget_slack: Option<f64>,
}

impl ResidualReport {
    /// Balance and normalization within 1e-8, no entry below -1e-12 and a
    /// nonnegative budget slack (up to 1e-8).
    pub fn is_valid(&self) -> bool {
        self.max_balance_residual <= 1e-8
            && self.normalization_residual <= 1e-8
            && self.min_value >= -1e-12
            && self.budget_slack.map_or(true, |s| s >= -1e-8)
    }
}

pub fn verify_measure(
    model: &CtmdpModel,
    z: &[f64],
    budget: Option<f64>,
) -> Result<ResidualReport, LpError> {
    if z.len() != model.pair_count() {
        return Err(LpError::DimensionMismatch {
            expected: model.pair_count(),
            got: z.len(),
        });
    }
    let mut balance = vec![0.0; model.state_count()];
    let mut total = 0.0;
    let mut occupancy = 0.0;
    for (k, pair) in model.pairs().iter().enumerate() {
        let v = z[k];
        balance[pair.state] -= v * pair.out_rate;
        for &(y, rate) in model.transitions(k) {
            balance[y] += v * rate;
        }
        total += v;
        occupancy += v * model.occupancy(pair.state) as f64;
    }
    Ok(ResidualReport {
        max_balance_residual: balance.iter().fold(0.0, |m, r| m.max(r.abs())),
        normalization_residual: (total - 1.0).abs(),
        min_value: z.iter().copied().fold(f64::INFINITY, f64::min),
        budget_slack: budget.map(|b| b - occupancy),
    })
}

/// States with two or more actions carrying more than `tol` mass.
pub fn randomized_states(model: &CtmdpModel, z: &[f64], tol: f64) -> usize {
    (0..model.state_count())
        .filter(|&x| model.pair_range(x).filter(|&k| z[k] > tol).count() >= 2)
        .count()
}
