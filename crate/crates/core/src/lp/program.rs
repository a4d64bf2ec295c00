use std::fmt::Write as _;

use crate::ctmdp::{Action, CtmdpModel};

/// A constraint row as sorted `(column, coefficient)` entries.
pub type SparseRow = Vec<(usize, f64)>;

/// `min c'x  s.t.  A_eq x = b_eq,  A_le x <= b_le,  x >= 0`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub eq_rows: Vec<SparseRow>,
    pub eq_rhs: Vec<f64>,
    pub le_rows: Vec<SparseRow>,
    pub le_rhs: Vec<f64>,
    pub names: Vec<String>,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        let names = (0..objective.len()).map(|j| format!("x{j}")).collect();
        LinearProgram {
            objective,
            names,
            ..Default::default()
        }
    }

    pub fn var_count(&self) -> usize {
        self.objective.len()
    }

    pub fn add_eq(&mut self, row: SparseRow, rhs: f64) {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
    }

    pub fn add_le(&mut self, row: SparseRow, rhs: f64) {
        self.le_rows.push(row);
        self.le_rhs.push(rhs);
    }

    /// Adds dense rows, dropping zero coefficients.
    pub fn add_eq_dense(&mut self, row: &[f64], rhs: f64) {
        self.add_eq(dense_to_sparse(row), rhs);
    }

    pub fn add_le_dense(&mut self, row: &[f64], rhs: f64) {
        self.add_le(dense_to_sparse(row), rhs);
    }

    /// Dimensions agree, indices are in range and every number is finite.
    pub fn is_well_formed(&self) -> bool {
        let n = self.var_count();
        let rows_ok = |rows: &[SparseRow], rhs: &[f64]| {
            rows.len() == rhs.len()
                && rhs.iter().all(|v| v.is_finite())
                && rows
                    .iter()
                    .all(|r| r.iter().all(|&(j, v)| j < n && v.is_finite()))
        };
        self.names.len() == n
            && self.objective.iter().all(|v| v.is_finite())
            && rows_ok(&self.eq_rows, &self.eq_rhs)
            && rows_ok(&self.le_rows, &self.le_rhs)
    }

    /// Plain-text listing: one line per variable, then one line per row.
    ///
    /// ```text
    /// lp <vars> <eq rows> <le rows>
    /// var <j> <name> <cost>
    /// eq <i> <rhs> <j>:<coef> ...
    /// le <i> <rhs> <j>:<coef> ...
    /// ```
    pub fn dump(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "lp {} {} {}",
            self.var_count(),
            self.eq_rows.len(),
            self.le_rows.len()
        )
        .unwrap();
        for (j, (name, c)) in self.names.iter().zip(&self.objective).enumerate() {
            writeln!(out, "var {j} {name} {c:?}").unwrap();
        }
        for (tag, rows, rhs) in [
            ("eq", &self.eq_rows, &self.eq_rhs),
            ("le", &self.le_rows, &self.le_rhs),
        ] {
            for (i, (row, b)) in rows.iter().zip(rhs.iter()).enumerate() {
                write!(out, "{tag} {i} {b:?}").unwrap();
                for (j, v) in row {
                    write!(out, " {j}:{v:?}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }
}

fn dense_to_sparse(row: &[f64]) -> SparseRow {
    row.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, &v)| (j, v))
        .collect()
}

/// Where one subsystem's variables and rows sit in a stacked program.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    pub subsystem: String,
    pub var_offset: usize,
    pub var_count: usize,
    /// First balance row; the normalization row follows the balance rows.
    pub eq_offset: usize,
    pub budget_row: usize,
    pub budget_rhs: f64,
}

/// Occupation-measure program of several subsystems solved together.
#[derive(Debug, Clone)]
pub struct StackedLp {
    pub lp: LinearProgram,
    pub blocks: Vec<BlockLayout>,
    /// Columns of a work-conserving longest-queue policy, one per state; a
    /// starting basis for the solver.
    pub crash_basis: Vec<usize>,
}

/// Serve the longest queue (lowest index on ties), idle only when empty; on
/// restricted models the state's first pair.
fn longest_queue_pair(model: &CtmdpModel, state: usize) -> usize {
    let levels = model.levels(state);
    let target = levels
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map_or(Action::Idle, |(j, _)| Action::Serve(j));
    model
        .pair_range(state)
        .find(|&k| model.pairs()[k].action == target)
        .unwrap_or(model.pair_offsets()[state])
}

fn action_name(model: &CtmdpModel, action: Action) -> String {
    match action {
        Action::Idle => "idle".to_string(),
        Action::Serve(j) => format!("serve:{}", model.queue_ids[j]),
    }
}

/// Builds the stacked program: per subsystem one balance row per state, a
/// normalization row and an occupancy budget row `sum z occ <= w_s * B`;
/// the objective is the total loss rate.
pub fn formulate(models: &[CtmdpModel], total_budget: u64, budget_weights: &[f64]) -> StackedLp {
    assert_eq!(models.len(), budget_weights.len(), "one weight per model");
    let n: usize = models.iter().map(|m| m.pair_count()).sum();
    let mut lp = LinearProgram {
        objective: Vec::with_capacity(n),
        names: Vec::with_capacity(n),
        ..Default::default()
    };
    let mut blocks = Vec::with_capacity(models.len());
    let mut crash_basis = Vec::new();
    for (model, &w) in models.iter().zip(budget_weights) {
        let var_offset = lp.objective.len();
        let eq_offset = lp.eq_rows.len();
        let states = model.state_count();
        let mut balance: Vec<SparseRow> = vec![Vec::new(); states];
        let mut normalization = Vec::with_capacity(model.pair_count());
        let mut budget = Vec::with_capacity(model.pair_count());
        for (k, pair) in model.pairs().iter().enumerate() {
            let col = var_offset + k;
            lp.objective.push(pair.cost);
            lp.names.push(format!(
                "z[{}][{}][{}]",
                model.subsystem,
                pair.state,
                action_name(model, pair.action)
            ));
            if pair.out_rate != 0.0 {
                balance[pair.state].push((col, -pair.out_rate));
            }
            for &(y, rate) in model.transitions(k) {
                balance[y].push((col, rate));
            }
            normalization.push((col, 1.0));
            let occ = model.occupancy(pair.state);
            if occ > 0 {
                budget.push((col, occ as f64));
            }
        }
        crash_basis.extend((0..states).map(|x| var_offset + longest_queue_pair(model, x)));
        for row in balance {
            lp.add_eq(row, 0.0);
        }
        lp.add_eq(normalization, 1.0);
        let budget_rhs = w * total_budget as f64;
        let budget_row = lp.le_rows.len();
        lp.add_le(budget, budget_rhs);
        blocks.push(BlockLayout {
            subsystem: model.subsystem.clone(),
            var_offset,
            var_count: model.pair_count(),
            eq_offset,
            budget_row,
            budget_rhs,
        });
    }
    StackedLp {
        lp,
        blocks,
        crash_basis,
    }
}
