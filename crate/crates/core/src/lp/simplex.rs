//! Dense two-phase primal simplex.
//!
//! The program is first split into independent blocks (connected components
//! of the variable/row incidence graph); each block is solved on its own
//! dense tableau. Phase one minimizes the sum of artificial variables, then
//! artificials are driven out of the basis (or their rows marked redundant)
//! and phase two optimizes the real objective with artificials barred from
//! entering.
//!
//! Under [`PivotRule::Bland`] the entering column is the lowest-index column
//! with negative reduced cost. [`PivotRule::Dantzig`] prices by the most
//! negative reduced cost and switches to Bland's entering rule while a run
//! of degenerate pivots lasts. The leaving row comes from a Harris two-pass
//! ratio test: among rows within `RHS_CLAMP` of the minimum ratio the
//! largest pivot wins, then the lowest-index basic variable. Taking the
//! lowest index alone admits pivots near the tolerance on degenerate ties,
//! and the resulting round-off cycles on occupation-measure programs.
//!
//! A caller may supply crash columns. They are eliminated into the initial
//! basis by Gauss-Jordan steps with partial pivoting. Inequality rows get an
//! excess artificial so a slack driven negative by the crash can be swapped
//! out; any other infeasibility, or a singular crash, discards it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::program::LinearProgram;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible (phase-one residual {residual:e})")]
    Infeasible { residual: f64 },
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex hit the iteration cap of {limit}")]
    IterationLimit { limit: usize },
    #[error("malformed linear program")]
    Malformed,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PivotRule {
    Bland,
    /// Most negative reduced cost; Bland's rule after `degenerate_limit`
    /// consecutive degenerate pivots, until the next nondegenerate one.
    Dantzig { degenerate_limit: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub rule: PivotRule,
    /// Smallest admissible pivot magnitude.
    pub pivot_tol: f64,
    /// Reduced costs above `-opt_tol` count as nonnegative.
    pub opt_tol: f64,
    /// Iteration cap is `cap_factor * (rows + columns)` per block.
    pub cap_factor: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            rule: PivotRule::Bland,
            pivot_tol: 1e-9,
            opt_tol: 1e-9,
            cap_factor: 50,
        }
    }
}

impl SimplexOptions {
    /// Dantzig pricing with the Bland fallback.
    pub fn fast() -> Self {
        SimplexOptions {
            rule: PivotRule::Dantzig {
                degenerate_limit: 50,
            },
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Sum over blocks of the per-block iteration caps.
    pub iteration_cap: usize,
}

/// Solve `lp` to an optimal basic feasible solution.
pub fn solve_lp(lp: &LinearProgram, opts: &SimplexOptions) -> Result<LpSolution, LpError> {
    solve_lp_from(lp, opts, &[])
}

/// Like [`solve_lp`], starting from the basis spanned by `crash` when those
/// columns form a nonsingular, primal feasible set; otherwise from the
/// all-artificial basis.
pub fn solve_lp_from(
    lp: &LinearProgram,
    opts: &SimplexOptions,
    crash: &[usize],
) -> Result<LpSolution, LpError> {
    if !lp.is_well_formed() {
        return Err(LpError::Malformed);
    }
    let n = lp.var_count();
    let mut x = vec![0.0; n];
    let mut iterations = 0;
    let mut iteration_cap = 0;

    for block in decompose(lp) {
        match block {
            Block::EmptyRow { rhs, is_eq } => {
                let ok = if is_eq { rhs.abs() <= 1e-9 } else { rhs >= -1e-9 };
                if !ok {
                    return Err(LpError::Infeasible {
                        residual: rhs.abs(),
                    });
                }
            }
            Block::FreeColumn(j) => {
                if lp.objective[j] < 0.0 {
                    return Err(LpError::Unbounded);
                }
            }
            Block::Component { cols, eq, le } => {
                let local: Vec<usize> = crash
                    .iter()
                    .filter_map(|j| cols.binary_search(j).ok())
                    .collect();
                let mut tableau = Tableau::new(lp, &cols, &eq, &le, !local.is_empty());
                if !local.is_empty() && !tableau.crash(&local, opts.pivot_tol) {
                    tableau = Tableau::new(lp, &cols, &eq, &le, false);
                }
                let cap = opts.cap_factor * (tableau.rows + cols.len() + le.len());
                iteration_cap += cap;
                let values = tableau.solve(opts, cap)?;
                iterations += tableau.iterations;
                for (k, &j) in cols.iter().enumerate() {
                    x[j] = values[k];
                }
            }
        }
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution {
        x,
        objective,
        iterations,
        iteration_cap,
    })
}

enum Block {
    EmptyRow { rhs: f64, is_eq: bool },
    FreeColumn(usize),
    Component {
        cols: Vec<usize>,
        eq: Vec<usize>,
        le: Vec<usize>,
    },
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn decompose(lp: &LinearProgram) -> Vec<Block> {
    let n = lp.var_count();
    let mut parent: Vec<usize> = (0..n).collect();
    let mut touched = vec![false; n];
    for row in lp.eq_rows.iter().chain(&lp.le_rows) {
        let mut first = None;
        for &(j, v) in row {
            if v == 0.0 {
                continue;
            }
            touched[j] = true;
            match first {
                None => first = Some(j),
                Some(f) => {
                    let (a, b) = (find(&mut parent, f), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }

    let mut blocks = Vec::new();
    let mut root_block = vec![usize::MAX; n];
    let mut comps: Vec<(Vec<usize>, Vec<usize>, Vec<usize>)> = Vec::new();
    for j in 0..n {
        if !touched[j] {
            blocks.push(Block::FreeColumn(j));
            continue;
        }
        let r = find(&mut parent, j);
        if root_block[r] == usize::MAX {
            root_block[r] = comps.len();
            comps.push((Vec::new(), Vec::new(), Vec::new()));
        }
        comps[root_block[r]].0.push(j);
    }
    let mut assign = |rows: &[Vec<(usize, f64)>], rhs: &[f64], is_eq: bool, blocks: &mut Vec<Block>| {
        for (i, row) in rows.iter().enumerate() {
            match row.iter().find(|e| e.1 != 0.0) {
                None => blocks.push(Block::EmptyRow { rhs: rhs[i], is_eq }),
                Some(&(j, _)) => {
                    let c = root_block[find(&mut parent, j)];
                    if is_eq {
                        comps[c].1.push(i);
                    } else {
                        comps[c].2.push(i);
                    }
                }
            }
        }
    };
    assign(&lp.eq_rows, &lp.eq_rhs, true, &mut blocks);
    assign(&lp.le_rows, &lp.le_rhs, false, &mut blocks);
    blocks.extend(
        comps
            .into_iter()
            .map(|(cols, eq, le)| Block::Component { cols, eq, le }),
    );
    blocks
}

struct Tableau {
    rows: usize,
    /// Structural + slack + artificial columns; the rhs is column `width - 1`.
    width: usize,
    structural: usize,
    first_artificial: usize,
    /// Per row, the slack and its excess column (an artificial whose
    /// column is the negated slack) when one was allocated.
    excess: Vec<Option<(usize, usize)>>,
    data: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    cost: Vec<f64>,
    iterations: usize,
}

const DROP_TOL: f64 = 1e-14;
const RHS_CLAMP: f64 = 1e-9;

impl Tableau {
    fn new(lp: &LinearProgram, cols: &[usize], eq: &[usize], le: &[usize], with_excess: bool) -> Self {
        let structural = cols.len();
        let mut local = std::collections::HashMap::with_capacity(cols.len());
        for (k, &j) in cols.iter().enumerate() {
            local.insert(j, k);
        }
        let rows = eq.len() + le.len();
        let slacks = le.len();
        // Rows needing an artificial: every equality, and inequalities whose
        // rhs is negative (the slack enters with coefficient -1 after negation).
        let needs_art: Vec<bool> = eq
            .iter()
            .map(|_| true)
            .chain(le.iter().map(|&i| lp.le_rhs[i] < 0.0))
            .collect();
        let artificials = needs_art.iter().filter(|&&b| b).count();
        let excess_count = if with_excess {
            needs_art.iter().filter(|&&b| !b).count()
        } else {
            0
        };
        let first_artificial = structural + slacks;
        let width = first_artificial + artificials + excess_count + 1;
        let mut excess = vec![None; rows];
        let mut next_excess = first_artificial + artificials;
        let mut data = vec![0.0; rows * width];
        let mut basis = vec![0; rows];
        let mut next_art = first_artificial;

        for (r, (row, rhs, slack)) in eq
            .iter()
            .map(|&i| (&lp.eq_rows[i], lp.eq_rhs[i], None))
            .chain(
                le.iter()
                    .enumerate()
                    .map(|(s, &i)| (&lp.le_rows[i], lp.le_rhs[i], Some(structural + s))),
            )
            .enumerate()
        {
            let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
            let line = &mut data[r * width..(r + 1) * width];
            for &(j, v) in row {
                line[local[&j]] += sign * v;
            }
            if let Some(s) = slack {
                line[s] = sign;
            }
            line[width - 1] = sign * rhs;
            if needs_art[r] {
                line[next_art] = 1.0;
                basis[r] = next_art;
                next_art += 1;
            } else {
                let s = slack.expect("inequality row");
                basis[r] = s;
                if with_excess {
                    line[next_excess] = -1.0;
                    excess[r] = Some((s, next_excess));
                    next_excess += 1;
                }
            }
        }

        let mut cost = vec![0.0; width - 1];
        for (k, &j) in cols.iter().enumerate() {
            cost[k] = lp.objective[j];
        }
        Tableau {
            rows,
            width,
            structural,
            first_artificial,
            excess,
            data,
            obj: vec![0.0; width],
            basis,
            cost,
            iterations: 0,
        }
    }

    /// Pivots the given columns into rows still held by artificials, each on
    /// its largest admissible entry. A slack left negative is swapped for its
    /// excess column. Returns whether every column entered and the resulting
    /// basis is primal feasible.
    fn crash(&mut self, columns: &[usize], pivot_tol: f64) -> bool {
        let w = self.width;
        for &q in columns {
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                if self.basis[r] < self.first_artificial {
                    continue;
                }
                let a = self.data[r * w + q].abs();
                if a > pivot_tol && best.map_or(true, |(_, b)| a > b) {
                    best = Some((r, a));
                }
            }
            let Some((r, _)) = best else { return false };
            self.pivot(r, q);
        }
        for r in 0..self.rows {
            if self.rhs(r) > -RHS_CLAMP {
                continue;
            }
            // The slack column is a unit vector while basic, so the swap
            // only flips the sign of row r.
            let swap = self.excess.iter().flatten().find(|(s, _)| *s == self.basis[r]);
            match swap {
                Some(&(_, e)) => self.pivot(r, e),
                None => return false,
            }
        }
        self.iterations = 0;
        let feasible = (0..self.rows).all(|r| self.rhs(r) > -RHS_CLAMP);
        self.clamp_rhs();
        feasible
    }

    fn rhs(&self, r: usize) -> f64 {
        self.data[r * self.width + self.width - 1]
    }

    fn set_objective(&mut self, cost: &[f64]) {
        let w = self.width;
        self.obj.iter_mut().for_each(|v| *v = 0.0);
        self.obj[..w - 1].copy_from_slice(cost);
        for r in 0..self.rows {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                let line = &self.data[r * w..(r + 1) * w];
                for (o, &v) in self.obj.iter_mut().zip(line) {
                    *o -= cb * v;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.width;
        let inv = 1.0 / self.data[r * w + q];
        let mut nz: Vec<(usize, f64)> = Vec::new();
        for c in 0..w {
            let v = &mut self.data[r * w + c];
            if *v != 0.0 {
                *v *= inv;
                if v.abs() < DROP_TOL {
                    *v = 0.0;
                } else {
                    nz.push((c, *v));
                }
            }
        }
        self.data[r * w + q] = 1.0;
        // Once the basis inverse fills in, pivot rows are mostly nonzero and
        // a contiguous sweep beats the indexed one. Both give the same bits:
        // untouched entries lose an exact zero and stored entries are never
        // below DROP_TOL.
        let dense = nz.len() * 3 > w;
        let pivot_row: Vec<f64> = if dense {
            self.data[r * w..(r + 1) * w].to_vec()
        } else {
            Vec::new()
        };
        let eliminate = |line: &mut [f64]| {
            let f = line[q];
            if f != 0.0 {
                if dense {
                    for (x, &v) in line.iter_mut().zip(&pivot_row) {
                        let y = *x - f * v;
                        *x = if y.abs() < DROP_TOL { 0.0 } else { y };
                    }
                } else {
                    for &(c, v) in &nz {
                        let x = line[c] - f * v;
                        line[c] = if x.abs() < DROP_TOL { 0.0 } else { x };
                    }
                }
                line[q] = 0.0;
            }
        };
        for i in 0..self.rows {
            if i != r {
                eliminate(&mut self.data[i * w..(i + 1) * w]);
            }
        }
        eliminate(&mut self.obj);
        self.basis[r] = q;
        self.iterations += 1;
    }

    /// Degenerate pivots leave round-off of either sign in the rhs; a
    /// negative basic value would poison later ratio tests.
    fn clamp_rhs(&mut self) {
        let w = self.width;
        for i in 0..self.rows {
            let b = &mut self.data[i * w + w - 1];
            if *b < 0.0 && *b > -RHS_CLAMP {
                *b = 0.0;
            }
        }
    }

    /// Runs simplex iterations on the current objective row over columns
    /// `0..allowed`.
    fn optimize(&mut self, opts: &SimplexOptions, allowed: usize, cap: usize) -> Result<(), LpError> {
        let w = self.width;
        let mut bland = matches!(opts.rule, PivotRule::Bland);
        let mut degenerate_run = 0;
        loop {
            let entering = if bland {
                (0..allowed).find(|&j| self.obj[j] < -opts.opt_tol)
            } else {
                let mut best = None;
                let mut best_val = -opts.opt_tol;
                for j in 0..allowed {
                    if self.obj[j] < best_val {
                        best_val = self.obj[j];
                        best = Some(j);
                    }
                }
                best
            };
            let Some(q) = entering else { return Ok(()) };
            if self.iterations >= cap {
                return Err(LpError::IterationLimit { limit: cap });
            }

            // Harris two-pass ratio test: the bound from rhs values relaxed by
            // `RHS_CLAMP`, then the largest pivot among rows within it.
            let mut bound = f64::INFINITY;
            for r in 0..self.rows {
                let a = self.data[r * w + q];
                if a > opts.pivot_tol {
                    bound = bound.min((self.rhs(r).max(0.0) + RHS_CLAMP) / a);
                }
            }
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.data[r * w + q];
                if a > opts.pivot_tol && self.rhs(r).max(0.0) / a <= bound {
                    let better = match leave {
                        None => true,
                        Some((br, ba)) => a > ba || (a == ba && self.basis[r] < self.basis[br]),
                    };
                    if better {
                        leave = Some((r, a));
                    }
                }
            }
            let leave = leave.map(|(r, a)| (r, self.rhs(r).max(0.0) / a));
            let Some((r, ratio)) = leave else {
                return Err(LpError::Unbounded);
            };
            if ratio <= 1e-12 {
                degenerate_run += 1;
                if let PivotRule::Dantzig { degenerate_limit } = opts.rule {
                    if degenerate_run > degenerate_limit {
                        bland = true;
                    }
                }
            } else {
                degenerate_run = 0;
                bland = matches!(opts.rule, PivotRule::Bland);
            }
            self.pivot(r, q);
            self.clamp_rhs();
        }
    }

    fn solve(&mut self, opts: &SimplexOptions, cap: usize) -> Result<Vec<f64>, LpError> {
        let w = self.width;
        if self.first_artificial < w - 1 {
            let mut phase1 = vec![0.0; w - 1];
            phase1[self.first_artificial..].iter_mut().for_each(|c| *c = 1.0);
            self.set_objective(&phase1);
            self.optimize(opts, w - 1, cap)?;
            let residual = -self.obj[w - 1];
            let scale = (0..self.rows).map(|r| self.rhs(r).abs()).fold(1.0, f64::max);
            if residual > 1e-9 * scale {
                return Err(LpError::Infeasible { residual });
            }
            // Drive remaining artificials out of the basis.
            for r in 0..self.rows {
                if self.basis[r] < self.first_artificial {
                    continue;
                }
                let line = &self.data[r * w..(r + 1) * w];
                let mut best: Option<(usize, f64)> = None;
                for (j, &v) in line[..self.first_artificial].iter().enumerate() {
                    if v.abs() > opts.pivot_tol && best.map_or(true, |(_, b)| v.abs() > b) {
                        best = Some((j, v.abs()));
                    }
                }
                // No candidate: the row is redundant and stays inert.
                if let Some((j, _)) = best {
                    self.pivot(r, j);
                }
            }
        }
        let cost = self.cost.clone();
        self.set_objective(&cost);
        self.optimize(opts, self.first_artificial, cap)?;

        let mut x = vec![0.0; self.structural];
        for r in 0..self.rows {
            let b = self.basis[r];
            if b < self.structural {
                let v = self.rhs(r);
                x[b] = if v < 0.0 && v > -1e-9 { 0.0 } else { v };
            }
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
        solve_lp(lp, &SimplexOptions::default())
    }

    #[test]
    fn single_equality() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add_eq_dense(&[1.0], 1.0);
        let s = solve(&lp).unwrap();
        assert_eq!(s.x, vec![1.0]);
        assert_eq!(s.objective, 1.0);
    }

    #[test]
    fn single_vertex_optimum() {
        let mut lp = LinearProgram::new(vec![-1.0, -1.0]);
        lp.add_le_dense(&[1.0, 1.0], 1.0);
        let s = solve(&lp).unwrap();
        assert!((s.objective + 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        lp.add_eq_dense(&[1.0, 1.0], 1.0);
        lp.add_le_dense(&[1.0, 1.0], 0.5);
        assert!(matches!(solve(&lp), Err(LpError::Infeasible { .. })));

        let mut lp = LinearProgram::new(vec![-1.0, 0.0]);
        lp.add_le_dense(&[-1.0, 1.0], 1.0);
        assert_eq!(solve(&lp), Err(LpError::Unbounded));

        let lp = LinearProgram::new(vec![-1.0]);
        assert_eq!(solve(&lp), Err(LpError::Unbounded));
    }

    #[test]
    fn negative_rhs_inequality() {
        // x1 + x2 >= 2 written as -x1 - x2 <= -2.
        let mut lp = LinearProgram::new(vec![1.0, 2.0]);
        lp.add_le_dense(&[-1.0, -1.0], -2.0);
        let s = solve(&lp).unwrap();
        assert!((s.objective - 2.0).abs() < 1e-12);
        assert!((s.x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0, 0.0]);
        lp.add_eq_dense(&[1.0, 1.0, 1.0], 2.0);
        lp.add_eq_dense(&[2.0, 2.0, 2.0], 4.0);
        lp.add_eq_dense(&[1.0, 0.0, 0.0], 0.5);
        let s = solve(&lp).unwrap();
        assert!((s.objective - 0.5).abs() < 1e-12);
        assert!((s.x[2] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn beale_cycling_example_terminates() {
        // Classic instance that cycles under the textbook largest-coefficient
        // rule with lowest-index tie-breaking.
        let mut lp = LinearProgram::new(vec![-0.75, 150.0, -0.02, 6.0]);
        lp.add_le_dense(&[0.25, -60.0, -0.04, 9.0], 0.0);
        lp.add_le_dense(&[0.5, -90.0, -0.02, 3.0], 0.0);
        lp.add_le_dense(&[0.0, 0.0, 1.0, 0.0], 1.0);
        for opts in [SimplexOptions::default(), SimplexOptions::fast()] {
            let s = solve_lp(&lp, &opts).unwrap();
            assert!((s.objective + 0.05).abs() < 1e-12, "{}", s.objective);
            assert!(s.iterations < s.iteration_cap);
        }
    }

    #[test]
    fn independent_blocks_are_solved_separately() {
        // Two copies of the same small program side by side.
        let mut lp = LinearProgram::new(vec![-1.0, -2.0, -1.0, -2.0]);
        lp.add_le_dense(&[1.0, 1.0, 0.0, 0.0], 3.0);
        lp.add_le_dense(&[0.0, 1.0, 0.0, 0.0], 2.0);
        lp.add_le_dense(&[0.0, 0.0, 1.0, 1.0], 3.0);
        lp.add_le_dense(&[0.0, 0.0, 0.0, 1.0], 2.0);
        let s = solve(&lp).unwrap();
        assert!((s.objective + 10.0).abs() < 1e-12);
        assert_eq!(s.x, vec![1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn malformed_is_rejected() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add_eq(vec![(3, 1.0)], 1.0);
        assert_eq!(solve(&lp), Err(LpError::Malformed));
    }
}
