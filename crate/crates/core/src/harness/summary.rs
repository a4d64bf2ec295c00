//! Plot data and tables derived from an [`ExperimentResult`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::{Arm, ExperimentResult};
use crate::sim::write_csv;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    /// One row per grid cell.
    pub csv: String,
    /// One block per processor: `processor pre post timeout` per budget.
    pub gnuplot: String,
    /// Mean lost requests per run, pre and post, per processor and budget.
    pub table: String,
}

#[derive(Serialize)]
struct Row<'a> {
    budget: u64,
    seed: u64,
    iteration: u32,
    arm: &'a str,
    phase: &'a str,
    sim_seed: u64,
    arrivals: Option<u64>,
    lost: Option<u64>,
    loss_rate: Option<f64>,
    mean_wait: Option<f64>,
    threshold: Option<f64>,
    error: Option<&'a str>,
}

/// `(mean loss rate, mean lost count)` per processor over every run of an arm.
fn per_processor(result: &ExperimentResult, budget: u64, arm: Arm) -> BTreeMap<&str, (f64, f64)> {
    let mut acc: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for r in result.reports(budget, arm).filter_map(|c| c.report.as_ref()) {
        for p in &r.processors {
            let e = acc.entry(p.id.as_str()).or_insert((0.0, 0.0, 0));
            e.0 += p.loss_rate;
            e.1 += p.lost as f64;
            e.2 += 1;
        }
    }
    acc.into_iter()
        .map(|(k, (r, l, n))| (k, (r / n as f64, l / n as f64)))
        .collect()
}

fn fmt_rate(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| format!("{x:.6}"))
}

/// Summary restricted to `processors` (all of them when empty). A pure
/// function of `result`, so re-summarizing a saved result reproduces the
/// same bytes.
pub fn summarize(result: &ExperimentResult, processors: &[String]) -> Summary {
    let rows: Vec<Row> = result
        .cells
        .iter()
        .map(|c| Row {
            budget: c.budget,
            seed: c.seed,
            iteration: c.iteration,
            arm: c.arm.name(),
            phase: &c.phase,
            sim_seed: c.sim_seed,
            arrivals: c.report.as_ref().map(|r| r.total_arrivals),
            lost: c.report.as_ref().map(|r| r.total_lost),
            loss_rate: c.report.as_ref().map(|r| r.aggregate_loss_rate),
            mean_wait: c.report.as_ref().map(|r| r.mean_wait),
            threshold: c.threshold,
            error: c.error.as_deref(),
        })
        .collect();
    let csv = write_csv(&rows);

    let selected: Vec<&String> = if processors.is_empty() {
        result.processors.iter().collect()
    } else {
        result.processors.iter().filter(|p| processors.contains(p)).collect()
    };
    let budgets = &result.spec.budgets;
    let stats: Vec<[BTreeMap<&str, (f64, f64)>; 3]> = budgets
        .iter()
        .map(|&b| {
            [
                per_processor(result, b, Arm::Equal),
                per_processor(result, b, Arm::Ctmdp),
                per_processor(result, b, Arm::Timeout),
            ]
        })
        .collect();

    let mut gnuplot = String::new();
    writeln!(gnuplot, "# columns: processor pre post timeout (mean loss rate)").unwrap();
    for (i, p) in selected.iter().enumerate() {
        if i > 0 {
            gnuplot.push_str("\n\n");
        }
        writeln!(gnuplot, "# processor {p}").unwrap();
        for (k, b) in budgets.iter().enumerate() {
            let get = |m: usize| stats[k][m].get(p.as_str()).map(|v| v.0);
            writeln!(gnuplot, "# budget {b}").unwrap();
            writeln!(gnuplot, "{p} {} {} {}", fmt_rate(get(0)), fmt_rate(get(1)), fmt_rate(get(2)))
                .unwrap();
        }
    }

    let mut table = String::new();
    write!(table, "{:<12}", "processor").unwrap();
    for b in budgets {
        write!(table, " {:>8} {:>8}", format!("{b}:pre"), format!("{b}:post")).unwrap();
    }
    table.push('\n');
    let count = |v: Option<&(f64, f64)>| v.map_or_else(|| "-".to_string(), |x| format!("{:.0}", x.1));
    for p in &selected {
        write!(table, "{:<12}", p).unwrap();
        for s in &stats {
            write!(table, " {:>8} {:>8}", count(s[0].get(p.as_str())), count(s[1].get(p.as_str()))).unwrap();
        }
        table.push('\n');
    }
    write!(table, "{:<12}", "aggregate").unwrap();
    for &b in budgets {
        let total = |arm| {
            let v: Vec<f64> = result
                .reports(b, arm)
                .filter_map(|c| c.report.as_ref().map(|r| r.total_lost as f64))
                .collect();
            if v.is_empty() {
                "-".to_string()
            } else {
                format!("{:.0}", v.iter().sum::<f64>() / v.len() as f64)
            }
        };
        write!(table, " {:>8} {:>8}", total(Arm::Equal), total(Arm::Ctmdp)).unwrap();
    }
    table.push('\n');

    Summary { csv, gnuplot, table }
}
