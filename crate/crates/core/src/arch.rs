//! Architecture description: buses, processors, bridges, traffic and budget.
//!
//! Documents are JSON. Processors are nested under the bus they attach to,
//! so "each processor on exactly one bus" holds by construction once ids are
//! checked for uniqueness.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the destination probability sum.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArchError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at line {line}, column {column}: {message}")]
    Schema {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown {kind} id \"{id}\"")]
    UnknownId { kind: &'static str, id: String },
    #[error("duplicate id \"{0}\"")]
    DuplicateId(String),
    #[error("invalid id \"{0}\": ids must be non-empty and must not contain ':' or '>'")]
    InvalidId(String),
    #[error("{what} of \"{id}\" must be finite and {bound}, got {value}")]
    InvalidRate {
        what: &'static str,
        id: String,
        bound: &'static str,
        value: f64,
    },
    #[error("destination probability {p} of processor \"{processor}\" is outside [0, 1]")]
    InvalidProbability { processor: String, p: f64 },
    #[error("destination probabilities of processor \"{processor}\" sum to {sum}, expected 1")]
    ProbabilitySum { processor: String, sum: f64 },
    #[error("bus \"{0}\" has no processors")]
    EmptyBus(String),
    #[error("bridge \"{0}\" joins a bus to itself")]
    SelfBridge(String),
    #[error("more than one bridge between buses \"{0}\" and \"{1}\"")]
    DuplicateBridge(String, String),
    #[error("bus graph is disconnected: processor \"{from}\" routes to \"{to}\" which is unreachable")]
    Disconnected { from: String, to: String },
    #[error("budget {budget} is below the queue count {queues} (each queue needs at least one slot)")]
    BudgetBelowQueueCount { budget: u64, queues: usize },
}

/// One entry of a processor's traffic distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Destination {
    pub to: String,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Processor {
    pub id: String,
    /// Index of the bus this processor is attached to.
    pub bus: usize,
    /// Poisson request rate.
    pub arrival_rate: f64,
    /// Empty means requests terminate at the attached bus.
    pub destinations: Vec<Destination>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub service_rate: f64,
    /// Indices into [`Architecture::processors`], in document order.
    pub processors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bridge {
    pub id: String,
    pub bus_a: usize,
    pub bus_b: usize,
}

impl Bridge {
    /// The bus on the other side of `bus`, if the bridge touches it.
    pub fn other(&self, bus: usize) -> Option<usize> {
        if self.bus_a == bus {
            Some(self.bus_b)
        } else if self.bus_b == bus {
            Some(self.bus_a)
        } else {
            None
        }
    }
}

/// A validated, fully cross-referenced architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub processors: Vec<Processor>,
    pub buses: Vec<Bus>,
    pub bridges: Vec<Bridge>,
    pub total_budget: u64,
    pub seed: u64,
    pub note: Option<String>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchDoc {
    budget: u64,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    note: Option<String>,
    buses: Vec<BusDoc>,
    bridges: Vec<BridgeDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusDoc {
    id: String,
    service_rate: f64,
    processors: Vec<ProcessorDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProcessorDoc {
    id: String,
    arrival_rate: f64,
    destinations: Vec<Destination>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BridgeDoc {
    id: String,
    between: [String; 2],
}

/// Parse and validate an architecture document.
pub fn parse_architecture(text: &str) -> Result<Architecture, ArchError> {
    let doc: ArchDoc = serde_json::from_str(text).map_err(|e| {
        let (line, column, message) = (e.line(), e.column(), e.to_string());
        if e.is_data() {
            ArchError::Schema {
                line,
                column,
                message,
            }
        } else {
            ArchError::Syntax {
                line,
                column,
                message,
            }
        }
    })?;
    Architecture::from_doc(doc)
}

fn check_id(id: &str, seen: &mut HashSet<String>) -> Result<(), ArchError> {
    if id.is_empty() || id.contains(':') || id.contains('>') {
        return Err(ArchError::InvalidId(id.to_string()));
    }
    if !seen.insert(id.to_string()) {
        return Err(ArchError::DuplicateId(id.to_string()));
    }
    Ok(())
}

impl Architecture {
    fn from_doc(doc: ArchDoc) -> Result<Self, ArchError> {
        let mut ids = HashSet::new();
        let mut buses = Vec::with_capacity(doc.buses.len());
        let mut processors = Vec::new();
        for (bus_index, bus) in doc.buses.iter().enumerate() {
            check_id(&bus.id, &mut ids)?;
            if !(bus.service_rate.is_finite() && bus.service_rate > 0.0) {
                return Err(ArchError::InvalidRate {
                    what: "service_rate",
                    id: bus.id.clone(),
                    bound: "> 0",
                    value: bus.service_rate,
                });
            }
            if bus.processors.is_empty() {
                return Err(ArchError::EmptyBus(bus.id.clone()));
            }
            let mut attached = Vec::with_capacity(bus.processors.len());
            for p in &bus.processors {
                check_id(&p.id, &mut ids)?;
                attached.push(processors.len());
                processors.push(Processor {
                    id: p.id.clone(),
                    bus: bus_index,
                    arrival_rate: p.arrival_rate,
                    destinations: p.destinations.clone(),
                });
            }
            buses.push(Bus {
                id: bus.id.clone(),
                service_rate: bus.service_rate,
                processors: attached,
            });
        }

        let bus_index: HashMap<&str, usize> = buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id.as_str(), i))
            .collect();
        let mut bridges = Vec::with_capacity(doc.bridges.len());
        let mut pairs = HashSet::new();
        for bridge in &doc.bridges {
            check_id(&bridge.id, &mut ids)?;
            let lookup = |id: &String| {
                bus_index.get(id.as_str()).copied().ok_or_else(|| ArchError::UnknownId {
                    kind: "bus",
                    id: id.clone(),
                })
            };
            let a = lookup(&bridge.between[0])?;
            let b = lookup(&bridge.between[1])?;
            if a == b {
                return Err(ArchError::SelfBridge(bridge.id.clone()));
            }
            if !pairs.insert((a.min(b), a.max(b))) {
                let (x, y) = (&buses[a.min(b)].id, &buses[a.max(b)].id);
                return Err(ArchError::DuplicateBridge(x.clone(), y.clone()));
            }
            bridges.push(Bridge {
                id: bridge.id.clone(),
                bus_a: a,
                bus_b: b,
            });
        }

        let arch = Architecture {
            processors,
            buses,
            bridges,
            total_budget: doc.budget,
            seed: doc.seed,
            note: doc.note,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Checks the traffic and budget invariants on an already indexed value.
    pub fn validate(&self) -> Result<(), ArchError> {
        for p in &self.processors {
            if !(p.arrival_rate.is_finite() && p.arrival_rate >= 0.0) {
                return Err(ArchError::InvalidRate {
                    what: "arrival_rate",
                    id: p.id.clone(),
                    bound: ">= 0",
                    value: p.arrival_rate,
                });
            }
            let mut targets = HashSet::new();
            let mut sum = 0.0;
            for d in &p.destinations {
                if self.processor_index(&d.to).is_none() {
                    return Err(ArchError::UnknownId {
                        kind: "processor",
                        id: d.to.clone(),
                    });
                }
                if !targets.insert(d.to.as_str()) {
                    return Err(ArchError::DuplicateId(format!("{}->{}", p.id, d.to)));
                }
                if !(d.p.is_finite() && (0.0..=1.0).contains(&d.p)) {
                    return Err(ArchError::InvalidProbability {
                        processor: p.id.clone(),
                        p: d.p,
                    });
                }
                sum += d.p;
            }
            if !p.destinations.is_empty() && (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
                return Err(ArchError::ProbabilitySum {
                    processor: p.id.clone(),
                    sum,
                });
            }
        }

        let component = self.bus_components();
        for p in &self.processors {
            for d in p.destinations.iter().filter(|d| d.p > 0.0) {
                let target = &self.processors[self.processor_index(&d.to).unwrap()];
                if component[p.bus] != component[target.bus] {
                    return Err(ArchError::Disconnected {
                        from: p.id.clone(),
                        to: d.to.clone(),
                    });
                }
            }
        }

        let queues = self.queue_count();
        if self.total_budget < queues as u64 {
            return Err(ArchError::BudgetBelowQueueCount {
                budget: self.total_budget,
                queues,
            });
        }
        Ok(())
    }

    /// Processor queues plus one ingress buffer per bridge direction.
    pub fn queue_count(&self) -> usize {
        self.processors.len() + 2 * self.bridges.len()
    }

    pub fn processor_index(&self, id: &str) -> Option<usize> {
        self.processors.iter().position(|p| p.id == id)
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn bridge_index(&self, id: &str) -> Option<usize> {
        self.bridges.iter().position(|b| b.id == id)
    }

    /// Adjacent buses of `bus` as `(bus, bridge)` pairs, sorted by bus id.
    pub fn neighbors(&self, bus: usize) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .bridges
            .iter()
            .enumerate()
            .filter_map(|(k, br)| br.other(bus).map(|o| (o, k)))
            .collect();
        out.sort_by(|x, y| self.buses[x.0].id.cmp(&self.buses[y.0].id));
        out
    }

    fn bus_components(&self) -> Vec<usize> {
        let mut comp = vec![usize::MAX; self.buses.len()];
        let mut next = 0;
        for start in 0..self.buses.len() {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = next;
            let mut queue = VecDeque::from([start]);
            while let Some(b) = queue.pop_front() {
                for (n, _) in self.neighbors(b) {
                    if comp[n] == usize::MAX {
                        comp[n] = next;
                        queue.push_back(n);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    /// Returns a copy with a different total budget, re-checking feasibility.
    pub fn with_budget(&self, budget: u64) -> Result<Architecture, ArchError> {
        let mut arch = self.clone();
        arch.total_budget = budget;
        arch.validate()?;
        Ok(arch)
    }

    /// Canonical JSON form.
    pub fn to_json(&self) -> String {
        let doc = ArchDoc {
            budget: self.total_budget,
            seed: self.seed,
            note: self.note.clone(),
            buses: self
                .buses
                .iter()
                .map(|b| BusDoc {
                    id: b.id.clone(),
                    service_rate: b.service_rate,
                    processors: b
                        .processors
                        .iter()
                        .map(|&i| {
                            let p = &self.processors[i];
                            ProcessorDoc {
                                id: p.id.clone(),
                                arrival_rate: p.arrival_rate,
                                destinations: p.destinations.clone(),
                            }
                        })
                        .collect(),
                })
                .collect(),
            bridges: self
                .bridges
                .iter()
                .map(|br| BridgeDoc {
                    id: br.id.clone(),
                    between: [
                        self.buses[br.bus_a].id.clone(),
                        self.buses[br.bus_b].id.clone(),
                    ],
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("architecture serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Hop {
    Bus(usize),
    Bridge(usize),
}

/// Shortest bus-hop path between a source processor and a destination.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub source: usize,
    pub destination: usize,
    pub probability: f64,
    /// Alternates bus, bridge, bus, ... starting at the source's bus.
    pub hops: Vec<Hop>,
}

impl Route {
    /// Offered load along the route: source rate times destination probability.
    pub fn rate(&self, arch: &Architecture) -> f64 {
        arch.processors[self.source].arrival_rate * self.probability
    }

    /// `(bridge, from_bus, to_bus)` for every bridge crossing, in order.
    pub fn crossings(&self) -> Vec<(usize, usize, usize)> {
        self.hops
            .windows(3)
            .step_by(2)
            .filter_map(|w| match (w[0], w[1], w[2]) {
                (Hop::Bus(a), Hop::Bridge(k), Hop::Bus(b)) => Some((k, a, b)),
                _ => None,
            })
            .collect()
    }
}

/// Errors from route computation on programmatically built architectures.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("processor \"{from}\" cannot reach \"{to}\"")]
pub struct UnreachableError {
    pub from: String,
    pub to: String,
}

/// One route per (source, destination) pair with positive probability.
///
/// Among all shortest paths the one with the lexicographically smallest
/// sequence of bus ids is chosen.
pub fn validate_routes(arch: &Architecture) -> Result<Vec<Route>, UnreachableError> {
    let mut routes = Vec::new();
    let mut dist_cache: HashMap<usize, Vec<usize>> = HashMap::new();
    for (s, proc_) in arch.processors.iter().enumerate() {
        for d in proc_.destinations.iter().filter(|d| d.p > 0.0) {
            let unreachable = || UnreachableError {
                from: proc_.id.clone(),
                to: d.to.clone(),
            };
            let t = arch.processor_index(&d.to).ok_or_else(unreachable)?;
            let target_bus = arch.processors[t].bus;
            let dist = dist_cache
                .entry(target_bus)
                .or_insert_with(|| bfs_distances(arch, target_bus));
            if dist[proc_.bus] == usize::MAX {
                return Err(unreachable());
            }
            let mut hops = vec![Hop::Bus(proc_.bus)];
            let mut cur = proc_.bus;
            while cur != target_bus {
                // neighbors() is sorted by bus id, so the first closer bus wins.
                let (next, bridge) = arch
                    .neighbors(cur)
                    .into_iter()
                    .find(|&(n, _)| dist[n] + 1 == dist[cur])
                    .expect("bfs distances are consistent");
                hops.push(Hop::Bridge(bridge));
                hops.push(Hop::Bus(next));
                cur = next;
            }
            routes.push(Route {
                source: s,
                destination: t,
                probability: d.p,
                hops,
            });
        }
    }
    Ok(routes)
}

fn bfs_distances(arch: &Architecture, from: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; arch.buses.len()];
    dist[from] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(b) = queue.pop_front() {
        for (n, _) in arch.neighbors(b) {
            if dist[n] == usize::MAX {
                dist[n] = dist[b] + 1;
                queue.push_back(n);
            }
        }
    }
    dist
}
