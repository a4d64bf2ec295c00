//! `bufplan`: buffer sizing for bus architectures with bridges.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

const SCHEMA: &str = "\
ARCHITECTURE FILE (JSON)
  {
    \"budget\": 160,             total buffer slots, at least one per queue
    \"seed\": 1,                 optional, default 1
    \"note\": \"...\",             optional free text
    \"buses\": [
      { \"id\": \"a\",
        \"service_rate\": 2.0,   exponential service rate, > 0
        \"processors\": [
          { \"id\": \"p1\",
            \"arrival_rate\": 0.5,   Poisson rate, >= 0
            \"destinations\": [ { \"to\": \"p2\", \"p\": 1.0 } ] } ] } ],
    \"bridges\": [ { \"id\": \"ab\", \"between\": [\"a\", \"b\"] } ]
  }
  Ids are unique, non-empty and contain neither ':' nor '>'. Destination
  probabilities sum to 1; an empty list keeps requests on their own bus.
  Unknown fields are rejected. Each bridge direction gets a buffer queue
  named <bridge>:<from>><to> on the receiving bus.

EXIT STATUS
  0 success, 1 invalid input or I/O failure, 2 numerical failure.";

#[derive(Parser, Debug)]
#[command(name = "bufplan", version, about, after_long_help = SCHEMA)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ArchArgs {
    /// Architecture JSON file.
    #[arg(long)]
    arch: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct OutArgs {
    /// Directory receiving every file the command writes.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct SolveArgs {
    /// Total buffer budget; defaults to the architecture's.
    #[arg(long)]
    budget: Option<u64>,
    /// Tail mass left uncovered when translating marginals to capacities.
    #[arg(long, default_value_t = bufplan::policy::DEFAULT_EPSILON)]
    epsilon: f64,
    /// Per-queue level cap of the CTMDP models.
    #[arg(long, default_value_t = bufplan::ctmdp::DEFAULT_MAX_LEVEL)]
    max_level: u32,
    /// Simplex entering rule; dantzig is much faster when budgets bind.
    #[arg(long, value_enum, default_value = "bland")]
    pivot: PivotArg,
}

#[derive(Args, Debug, Clone)]
struct HorizonArgs {
    /// Simulated time per run.
    #[arg(long, default_value_t = 20_000.0, conflicts_with = "arrivals")]
    time: f64,
    /// Stop each run after this many arrivals instead.
    #[arg(long)]
    arrivals: Option<u64>,
}

impl HorizonArgs {
    fn horizon(&self) -> bufplan::Horizon {
        match self.arrivals {
            Some(n) => bufplan::Horizon::Arrivals(n),
            None => bufplan::Horizon::Time(self.time),
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
    Gnuplot,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum PivotArg {
    Bland,
    Dantzig,
}

impl PivotArg {
    fn rule(self) -> bufplan::lp::PivotRule {
        match self {
            PivotArg::Bland => bufplan::lp::PivotRule::Bland,
            PivotArg::Dantzig => bufplan::SimplexOptions::fast().rule,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum PolicyArg {
    Fcfs,
    LongestQueue,
    Timeout,
    Ctmdp,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum AllocationArg {
    Equal,
    Proportional,
    Ctmdp,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check an architecture and print its queue, bus and bridge counts.
    #[command(after_long_help = SCHEMA)]
    Validate {
        #[command(flatten)]
        arch: ArchArgs,
        /// Check this budget instead of the file's.
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Cut bridges into per-bus subsystems; writes plan.json.
    #[command(after_long_help = SCHEMA)]
    Split {
        #[command(flatten)]
        arch: ArchArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Solve the subsystem programs; writes solution.json.
    #[command(after_long_help = SCHEMA)]
    Solve {
        #[command(flatten)]
        arch: ArchArgs,
        #[command(flatten)]
        out: OutArgs,
        #[command(flatten)]
        solve: SolveArgs,
        /// Also write the stacked program as text to this file in --out.
        #[arg(long)]
        dump_lp: Option<PathBuf>,
    },
    /// Solve and size the buffers; writes allocation.json.
    #[command(after_long_help = SCHEMA)]
    Size {
        #[command(flatten)]
        arch: ArchArgs,
        #[command(flatten)]
        out: OutArgs,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Simulate one run; writes report.json or report.csv.
    #[command(after_long_help = SCHEMA)]
    Simulate {
        #[command(flatten)]
        arch: ArchArgs,
        #[command(flatten)]
        out: OutArgs,
        #[command(flatten)]
        solve: SolveArgs,
        #[command(flatten)]
        horizon: HorizonArgs,
        /// Run seed; defaults to the architecture's.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "fcfs")]
        policy: PolicyArg,
        /// Capacities to simulate; ctmdp by default for the ctmdp policy,
        /// equal otherwise.
        #[arg(long, value_enum)]
        allocation: Option<AllocationArg>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Run the budget sweep; writes experiment.json, summary.csv,
    /// loss.gnuplot and table.txt.
    #[command(after_long_help = SCHEMA)]
    Experiment {
        #[command(flatten)]
        arch: ArchArgs,
        #[command(flatten)]
        out: OutArgs,
        #[command(flatten)]
        horizon: HorizonArgs,
        /// Comma-separated budgets.
        #[arg(long, value_delimiter = ',', default_values_t = [160u64, 320, 640])]
        budgets: Vec<u64>,
        /// Refinement rounds per budget and seed.
        #[arg(long, default_value_t = 10)]
        iterations: u32,
        /// First seed; defaults to the architecture's.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = bufplan::policy::DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = bufplan::ctmdp::DEFAULT_MAX_LEVEL)]
        max_level: u32,
        /// Simplex entering rule; dantzig is much faster when budgets bind.
        #[arg(long, value_enum, default_value = "bland")]
        pivot: PivotArg,
        /// Worker threads for grid cells; all cores by default.
        #[arg(long)]
        jobs: Option<usize>,
        /// Comma-separated processors for the plot data and table.
        #[arg(long, value_delimiter = ',')]
        processors: Vec<String>,
        /// Also print this artifact to stdout.
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Re-derive summary.csv, loss.gnuplot and table.txt from experiment.json.
    Report {
        /// A saved experiment.json.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, value_delimiter = ',')]
        processors: Vec<String>,
        /// Also print this artifact to stdout.
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(io::EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code)
        }
    }
}
