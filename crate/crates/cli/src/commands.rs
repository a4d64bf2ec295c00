//! Command implementations.

use std::path::Path;

use bufplan::harness::{
    build_models, initial_weights, solve_plan, CtmdpPlan, ExperimentSpec, SolutionCache,
    SolveSettings,
};
use bufplan::policy::{equal_allocation, proportional_allocation, BufferAllocation};
use bufplan::sim::calibrate_timeout;
use bufplan::{
    formulate, parse_architecture, run_experiment, simulate, split, split_with_rates, summarize,
    Architecture, ExperimentResult, Policy, SimConfig,
};
use serde_json::json;

use crate::io::{read_text, CliError, OutDir};
use crate::{AllocationArg, Command, Format, PolicyArg, SolveArgs};

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate { arch, budget } => validate(&arch.arch, budget),
        Command::Split { arch, out } => {
            let arch = load(&arch.arch, None)?;
            let out = OutDir::new(&out.out)?;
            let plan = split_with_rates(&arch)?;
            let path = out.write("plan.json", &plan.to_json())?;
            println!(
                "{} subsystems, {} queues -> {}",
                plan.subsystems.len(),
                plan.queue_ids().len(),
                path.display()
            );
            Ok(())
        }
        Command::Solve {
            arch,
            out,
            solve,
            dump_lp,
        } => {
            let arch = load(&arch.arch, solve.budget)?;
            let out = OutDir::new(&out.out)?;
            if let Some(name) = &dump_lp {
                out.resolve(name)?;
            }
            let (plan, weights) = solve_arch(&arch, &solve)?;
            for s in &plan.subsystems {
                println!(
                    "{:<10} states {:>5}  occupancy {:.4}/{:.4}  loss rate {:.6}  randomized {}",
                    s.subsystem, s.states, s.occupancy, s.occupancy_budget, s.loss_rate, s.randomized_states
                );
            }
            println!("objective {:.6}", plan.objective);
            if let Some(name) = dump_lp {
                let split = split_with_rates(&arch)?;
                let models = build_models(&split, arch.total_budget, &weights, &settings(&solve))?;
                let stacked = formulate(&models, arch.total_budget, &weights);
                out.write(name, &stacked.lp.dump())?;
            }
            out.write("solution.json", &pretty(&plan))?;
            Ok(())
        }
        Command::Size { arch, out, solve } => {
            let arch = load(&arch.arch, solve.budget)?;
            let out = OutDir::new(&out.out)?;
            let (plan, _) = solve_arch(&arch, &solve)?;
            for q in &plan.allocation.queues {
                println!("{:<12} {}", q.id, q.capacity);
            }
            out.write("allocation.json", &plan.allocation.to_json())?;
            Ok(())
        }
        Command::Simulate {
            arch,
            out,
            solve,
            horizon,
            seed,
            policy,
            allocation,
            format,
        } => {
            let arch = load(&arch.arch, solve.budget)?;
            let out = OutDir::new(&out.out)?;
            if format == Format::Gnuplot {
                return Err(CliError::validation(
                    "cli",
                    "simulate writes json or csv; gnuplot data comes from experiment and report",
                ));
            }
            let seed = seed.unwrap_or(arch.seed);
            let horizon = horizon.horizon();
            let allocation = allocation.unwrap_or(if policy == PolicyArg::Ctmdp {
                AllocationArg::Ctmdp
            } else {
                AllocationArg::Equal
            });
            let needs_plan = policy == PolicyArg::Ctmdp || allocation == AllocationArg::Ctmdp;
            let plan = if needs_plan {
                Some(solve_arch(&arch, &solve)?.0)
            } else {
                None
            };
            let alloc = match allocation {
                AllocationArg::Ctmdp => plan.as_ref().expect("solved").allocation.clone(),
                other => baseline(&arch, other)?,
            };
            let policy = match policy {
                PolicyArg::Fcfs => Policy::Fcfs,
                PolicyArg::LongestQueue => Policy::LongestQueue,
                PolicyArg::Timeout => Policy::Timeout {
                    threshold: calibrate_timeout(&arch, &alloc, horizon, seed)?,
                },
                PolicyArg::Ctmdp => Policy::Ctmdp {
                    policies: plan.as_ref().expect("solved").policies(),
                },
            };
            let phase = if matches!(policy, Policy::Ctmdp { .. }) {
                "post"
            } else {
                "pre"
            };
            let report = simulate(&arch, &SimConfig::new(alloc, policy, horizon, seed))?;
            println!(
                "{} arrivals, {} lost, aggregate loss rate {:.6}, mean wait {:.6}",
                report.total_arrivals, report.total_lost, report.aggregate_loss_rate, report.mean_wait
            );
            match format {
                Format::Csv => out.write("report.csv", &report.to_csv(Some(arch.total_budget), phase))?,
                _ => out.write("report.json", &report.to_json())?,
            };
            Ok(())
        }
        Command::Experiment {
            arch,
            out,
            horizon,
            budgets,
            iterations,
            seed,
            seeds,
            epsilon,
            max_level,
            pivot,
            jobs,
            processors,
            format,
        } => {
            let arch = load(&arch.arch, None)?;
            let out = OutDir::new(&out.out)?;
            check_epsilon(epsilon)?;
            if seeds == 0 {
                return Err(CliError::validation("harness", "--seeds must be at least 1"));
            }
            check_processors(&arch.processors.iter().map(|p| p.id.clone()).collect::<Vec<_>>(), &processors)?;
            let first = seed.unwrap_or(arch.seed);
            let spec = ExperimentSpec {
                budgets,
                iterations,
                seeds: (0..seeds).map(|k| first.wrapping_add(k)).collect(),
                settings: SolveSettings {
                    epsilon,
                    max_level,
                    pivot: pivot.rule(),
                    ..Default::default()
                },
                horizon: horizon.horizon(),
                ..Default::default()
            };
            let result = match jobs {
                Some(0) => return Err(CliError::validation("cli", "--jobs must be at least 1")),
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| CliError::validation("cli", e))?
                    .install(|| run_experiment(&arch, &spec))?,
                None => run_experiment(&arch, &spec)?,
            };
            out.write("experiment.json", &result.to_json())?;
            emit_summary(&out, &result, &processors, format)?;
            let failures = result.failures();
            if failures > 0 {
                return Err(CliError::numerical(
                    "harness",
                    format!("{failures} grid cell(s) failed; partial results were written"),
                ));
            }
            Ok(())
        }
        Command::Report {
            input,
            out,
            processors,
            format,
        } => {
            let text = read_text(&input)?;
            let result = ExperimentResult::from_json(&text).map_err(|e| {
                CliError::validation("harness", format!("{} is not an experiment result: {e}", input.display()))
            })?;
            check_processors(&result.processors, &processors)?;
            let out = OutDir::new(&out.out)?;
            emit_summary(&out, &result, &processors, format)
        }
    }
}

fn validate(path: &Path, budget: Option<u64>) -> Result<(), CliError> {
    let arch = load(path, budget)?;
    let plan = split(&arch);
    println!(
        "processors {} buses {} bridges {} queues {} budget {}",
        arch.processors.len(),
        arch.buses.len(),
        arch.bridges.len(),
        plan.queue_ids().len(),
        arch.total_budget
    );
    Ok(())
}

fn load(path: &Path, budget: Option<u64>) -> Result<Architecture, CliError> {
    let text = read_text(path)?;
    let arch = parse_architecture(&text).map_err(|e| {
        CliError::validation("arch_model", format!("{}: {e}", path.display()))
    })?;
    bufplan::arch::validate_routes(&arch)?;
    Ok(match budget {
        Some(b) => arch.with_budget(b)?,
        None => arch,
    })
}

fn check_epsilon(epsilon: f64) -> Result<(), CliError> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(CliError::validation(
            "policy_alloc",
            format!("--epsilon must lie in (0, 1), got {epsilon}"),
        ))
    }
}

fn check_processors(known: &[String], wanted: &[String]) -> Result<(), CliError> {
    match wanted.iter().find(|p| !known.contains(p)) {
        Some(p) => Err(CliError::validation("harness", format!("unknown processor \"{p}\""))),
        None => Ok(()),
    }
}

fn settings(solve: &SolveArgs) -> SolveSettings {
    SolveSettings {
        epsilon: solve.epsilon,
        max_level: solve.max_level,
        pivot: solve.pivot.rule(),
        ..Default::default()
    }
}

fn solve_arch(arch: &Architecture, solve: &SolveArgs) -> Result<(CtmdpPlan, Vec<f64>), CliError> {
    check_epsilon(solve.epsilon)?;
    let plan = split_with_rates(arch)?;
    let weights = initial_weights(&plan, arch.total_budget);
    let solved = solve_plan(&plan, arch.total_budget, &weights, &settings(solve), &SolutionCache::new())?;
    Ok((solved, weights))
}

fn baseline(arch: &Architecture, kind: AllocationArg) -> Result<BufferAllocation, CliError> {
    let plan = split_with_rates(arch)?;
    let ids = plan.queue_ids();
    Ok(match kind {
        AllocationArg::Proportional => {
            let rates: Vec<f64> = plan.queues().map(|q| q.arrival_rate).collect();
            proportional_allocation(&ids, &rates, arch.total_budget)?
        }
        _ => equal_allocation(&ids, arch.total_budget)?,
    })
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn emit_summary(
    out: &OutDir,
    result: &ExperimentResult,
    processors: &[String],
    format: Option<Format>,
) -> Result<(), CliError> {
    let summary = summarize(result, processors);
    out.write("summary.csv", &summary.csv)?;
    out.write("loss.gnuplot", &summary.gnuplot)?;
    out.write("table.txt", &summary.table)?;
    let headline = pretty(&json!({
        "improvements": result.improvements,
        "replication": result.replication,
        "notices": result.notices,
    }));
    match format {
        Some(Format::Json) => println!("{headline}"),
        Some(Format::Csv) => print!("{}", summary.csv),
        Some(Format::Gnuplot) => print!("{}", summary.gnuplot),
        None => {
            print!("{}", summary.table);
            for i in &result.improvements {
                let pct = i.percent.map_or_else(|| "n/a".to_string(), |p| format!("{p:.1}%"));
                println!(
                    "budget {} vs {}: {} ({} of {} seeds improved)",
                    i.budget,
                    i.baseline.name(),
                    pct,
                    i.seeds_improved,
                    i.seeds
                );
            }
            for n in &result.notices {
                println!("notice: {n}");
            }
        }
    }
    Ok(())
}
