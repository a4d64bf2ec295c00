//! Event-driven simulation of the unsplit architecture with finite buffers.
//!
//! A request is born at a processor, sampled onto one of its routes, and
//! waits in the processor's queue. Buses serve one request at a time; a
//! request stays at the head of its queue while in service and, on
//! completion, moves into the next bridge buffer of its route. Arrivals to a
//! full buffer are lost.
//!
//! Counting starts after the warmup: a queue counts an entry when the entry
//! happens inside the window, and a processor counts a request when it is
//! born inside the window. This keeps `arrivals = served + lost + residual`
//! exact per queue.

mod engine;
pub mod rng;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::UnreachableError;
use crate::policy::{BufferAllocation, StationaryPolicy};

pub use engine::simulate;

pub const DEFAULT_WARMUP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// Stop when this many requests have been born.
    Arrivals(u64),
    /// Stop at this virtual time.
    Time(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    /// Oldest head-of-line request first.
    Fcfs,
    LongestQueue,
    /// FCFS; a head whose wait exceeds `threshold` is dropped when inspected.
    Timeout { threshold: f64 },
    /// One policy per bus, keyed by subsystem id.
    Ctmdp { policies: Vec<StationaryPolicy> },
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Fcfs => "fcfs",
            Policy::LongestQueue => "longest-queue",
            Policy::Timeout { .. } => "timeout",
            Policy::Ctmdp { .. } => "ctmdp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub allocation: BufferAllocation,
    pub policy: Policy,
    pub horizon: Horizon,
    pub seed: u64,
    /// Fraction of the horizon excluded from statistics.
    pub warmup: f64,
}

impl SimConfig {
    pub fn new(allocation: BufferAllocation, policy: Policy, horizon: Horizon, seed: u64) -> Self {
        SimConfig {
            allocation,
            policy,
            horizon,
            seed,
            warmup: DEFAULT_WARMUP,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("allocation has no capacity for queue {0}")]
    MissingQueue(String),
    #[error("queue {0} has capacity 0")]
    ZeroCapacity(String),
    #[error("all arrival rates are zero, so an arrival-count horizon never ends")]
    NoArrivals,
    #[error("horizon must be positive")]
    BadHorizon,
    #[error("warmup fraction must lie in [0, 1), got {0}")]
    BadWarmup(f64),
    #[error("timeout threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("no arbitration policy for bus {0}")]
    MissingPolicy(String),
    #[error("policy for bus {0} does not match its queues")]
    PolicyShape(String),
    #[error(transparent)]
    Route(#[from] UnreachableError),
    #[error("no request was served inside the measurement window")]
    NothingServed,
    #[error("reports cover different queue sets")]
    MismatchedQueues,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueClass {
    Processor,
    Bridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueStats {
    pub id: String,
    pub kind: QueueClass,
    pub bus: String,
    pub capacity: u32,
    pub arrivals: u64,
    pub served: u64,
    /// Blocked on entry plus timed out.
    pub lost: u64,
    pub timed_out: u64,
    pub residual: u64,
    pub loss_rate: f64,
    /// Mean time from entering the queue to service completion.
    pub mean_wait: f64,
    /// Time-averaged number of requests in the queue, in service included.
    pub mean_occupancy: f64,
}

/// Requests born at a processor and their fate anywhere along the route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessorStats {
    pub id: String,
    pub arrivals: u64,
    pub lost: u64,
    pub loss_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub policy: String,
    pub horizon: Horizon,
    /// Length of the measurement window in virtual time.
    pub window: f64,
    pub queues: Vec<QueueStats>,
    pub processors: Vec<ProcessorStats>,
    pub total_arrivals: u64,
    pub total_lost: u64,
    pub aggregate_loss_rate: f64,
    /// Mean over all served queue visits.
    pub mean_wait: f64,
    /// Wall-clock seconds; not serialized so reports stay byte-identical.
    #[serde(skip)]
    pub runtime_secs: f64,
}

/// One line of the per-queue CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub queue_id: String,
    pub kind: QueueClass,
    pub arrivals: u64,
    pub served: u64,
    pub lost: u64,
    pub loss_rate: f64,
    pub mean_wait: f64,
    pub seed: u64,
    pub policy: String,
    pub budget: Option<u64>,
    pub phase: String,
}

impl SimulationReport {
    pub fn queue(&self, id: &str) -> Option<&QueueStats> {
        self.queues.iter().find(|q| q.id == id)
    }

    pub fn processor(&self, id: &str) -> Option<&ProcessorStats> {
        self.processors.iter().find(|p| p.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn csv_rows(&self, budget: Option<u64>, phase: &str) -> Vec<CsvRow> {
        self.queues
            .iter()
            .map(|q| CsvRow {
                queue_id: q.id.clone(),
                kind: q.kind,
                arrivals: q.arrivals,
                served: q.served,
                lost: q.lost,
                loss_rate: q.loss_rate,
                mean_wait: q.mean_wait,
                seed: self.seed,
                policy: self.policy.clone(),
                budget,
                phase: phase.to_string(),
            })
            .collect()
    }

    pub fn to_csv(&self, budget: Option<u64>, phase: &str) -> String {
        write_csv(&self.csv_rows(budget, phase))
    }

    /// `arrivals = served + lost + residual` for every queue.
    pub fn is_conserved(&self) -> bool {
        self.queues
            .iter()
            .all(|q| q.arrivals == q.served + q.lost + q.residual)
    }
}

/// CSV text with a header line; empty when there are no rows.
pub fn write_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("row serializes");
    }
    if rows.is_empty() {
        return String::new();
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
}

/// Mean sojourn time over a calibration run under FCFS without timeouts.
pub fn calibrate_timeout(
    arch: &crate::arch::Architecture,
    allocation: &BufferAllocation,
    horizon: Horizon,
    seed: u64,
) -> Result<f64, SimError> {
    let cfg = SimConfig::new(allocation.clone(), Policy::Fcfs, horizon, seed);
    let report = simulate(arch, &cfg)?;
    if report.queues.iter().all(|q| q.served == 0) {
        return Err(SimError::NothingServed);
    }
    Ok(report.mean_wait)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossDelta {
    pub id: String,
    pub pre: f64,
    pub post: f64,
    pub delta: f64,
    /// `100 * (post - pre) / pre`; absent when `pre` is 0.
    pub percent: Option<f64>,
    pub increased: bool,
}

impl LossDelta {
    pub fn new(id: &str, pre: f64, post: f64) -> Self {
        LossDelta {
            id: id.to_string(),
            pre,
            post,
            delta: post - pre,
            percent: (pre > 0.0).then(|| 100.0 * (post - pre) / pre),
            increased: post > pre,
        }
    }
}

/// Loss-rate changes from `pre` to `post`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub queues: Vec<LossDelta>,
    pub processors: Vec<LossDelta>,
    pub aggregate: LossDelta,
}

impl Comparison {
    pub fn worsened_processors(&self) -> Vec<&str> {
        self.processors
            .iter()
            .filter(|d| d.increased)
            .map(|d| d.id.as_str())
            .collect()
    }
}

pub fn compare(pre: &SimulationReport, post: &SimulationReport) -> Result<Comparison, SimError> {
    let same_ids = |a: Vec<&str>, b: Vec<&str>| a == b;
    if !same_ids(
        pre.queues.iter().map(|q| q.id.as_str()).collect(),
        post.queues.iter().map(|q| q.id.as_str()).collect(),
    ) || !same_ids(
        pre.processors.iter().map(|p| p.id.as_str()).collect(),
        post.processors.iter().map(|p| p.id.as_str()).collect(),
    ) {
        return Err(SimError::MismatchedQueues);
    }
    Ok(Comparison {
        queues: pre
            .queues
            .iter()
            .zip(&post.queues)
            .map(|(a, b)| LossDelta::new(&a.id, a.loss_rate, b.loss_rate))
            .collect(),
        processors: pre
            .processors
            .iter()
            .zip(&post.processors)
            .map(|(a, b)| LossDelta::new(&a.id, a.loss_rate, b.loss_rate))
            .collect(),
        aggregate: LossDelta::new("aggregate", pre.aggregate_loss_rate, post.aggregate_loss_rate),
    })
}
