use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use super::rng::{Stream, StreamKind};
use super::{
    Horizon, Policy, ProcessorStats, QueueClass, QueueStats, SimConfig, SimError,
    SimulationReport,
};
use crate::arch::{validate_routes, Architecture};
use crate::ctmdp::Action;
use crate::policy::StationaryPolicy;
use crate::split::{split, QueueKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Arrival(usize),
    Completion(usize),
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Reversed so the max-heap pops the earliest event, then the lowest seq.
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    entered: f64,
    origin: u32,
    route: u32,
    hop: u32,
    counted: bool,
    origin_counted: bool,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    arrivals: u64,
    served: u64,
    lost: u64,
    timed_out: u64,
    wait_sum: f64,
    area: f64,
    last_change: f64,
}

struct Bus {
    mu: f64,
    /// Queue indices in subsystem order.
    queues: Vec<usize>,
    serving: Option<usize>,
    service: Stream,
    arbitration: Stream,
    policy: Option<StationaryPolicy>,
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    queues: Vec<VecDeque<Entry>>,
    capacity: Vec<usize>,
    queue_bus: Vec<usize>,
    tally: Vec<Tally>,
    buses: Vec<Bus>,
    routes: Vec<Vec<usize>>,
    /// Per processor: `(cumulative probability, route)`.
    choices: Vec<Vec<(f64, usize)>>,
    born: Vec<u64>,
    origin_lost: Vec<u64>,
    events: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    window_start: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Runs one simulation; fully determined by `arch` and `cfg`.
pub fn simulate(arch: &Architecture, cfg: &SimConfig) -> Result<SimulationReport, SimError> {
    let started = std::time::Instant::now();
    if !(0.0..1.0).contains(&cfg.warmup) {
        return Err(SimError::BadWarmup(cfg.warmup));
    }
    match cfg.horizon {
        Horizon::Arrivals(0) => return Err(SimError::BadHorizon),
        Horizon::Time(t) if !(t > 0.0 && t.is_finite()) => return Err(SimError::BadHorizon),
        Horizon::Arrivals(_) if arch.processors.iter().all(|p| p.arrival_rate == 0.0) => {
            return Err(SimError::NoArrivals)
        }
        _ => {}
    }
    if let Policy::Timeout { threshold } = cfg.policy {
        if !(threshold > 0.0) {
            return Err(SimError::BadThreshold(threshold));
        }
    }

    let plan = split(arch);
    let mut queue_ids = Vec::new();
    let mut kinds = Vec::new();
    let mut capacity = Vec::new();
    let mut queue_bus = Vec::new();
    let mut buses = Vec::new();
    for (b, sub) in plan.subsystems.iter().enumerate() {
        let mut members = Vec::new();
        for q in &sub.queues {
            let cap = cfg
                .allocation
                .capacity(&q.id)
                .ok_or_else(|| SimError::MissingQueue(q.id.clone()))?;
            if cap == 0 {
                return Err(SimError::ZeroCapacity(q.id.clone()));
            }
            members.push(queue_ids.len());
            queue_ids.push(q.id.clone());
            kinds.push(q.kind.clone());
            capacity.push(cap as usize);
            queue_bus.push(b);
        }
        let policy = match &cfg.policy {
            Policy::Ctmdp { policies } => {
                let p = policies
                    .iter()
                    .find(|p| p.subsystem == sub.id)
                    .ok_or_else(|| SimError::MissingPolicy(sub.id.clone()))?;
                let ids: Vec<&String> = sub.queues.iter().map(|q| &q.id).collect();
                let states: usize = p.caps.iter().map(|&c| c as usize + 1).product();
                if p.queue_ids.iter().collect::<Vec<_>>() != ids || p.rules.len() != states {
                    return Err(SimError::PolicyShape(sub.id.clone()));
                }
                Some(p.clone())
            }
            _ => None,
        };
        buses.push(Bus {
            mu: sub.service_rate,
            queues: members,
            serving: None,
            service: Stream::new(cfg.seed, StreamKind::Service, b),
            arbitration: Stream::new(cfg.seed, StreamKind::Arbitration, b),
            policy,
        });
    }

    let index_of = |id: &str| queue_ids.iter().position(|q| q == id).expect("split queue");
    let proc_queue: Vec<usize> = arch.processors.iter().map(|p| index_of(&p.id)).collect();
    let mut routes: Vec<Vec<usize>> = Vec::new();
    let mut choices: Vec<Vec<(f64, usize)>> = vec![Vec::new(); arch.processors.len()];
    for route in validate_routes(arch)? {
        let mut path = vec![proc_queue[route.source]];
        for (k, from, to) in route.crossings() {
            path.push(index_of(&crate::split::bridge_queue_id(
                &arch.bridges[k].id,
                &arch.buses[from].id,
                &arch.buses[to].id,
            )));
        }
        let acc = choices[route.source].last().map_or(0.0, |c| c.0) + route.probability;
        choices[route.source].push((acc, routes.len()));
        routes.push(path);
    }
    for (p, c) in choices.iter_mut().enumerate() {
        if c.is_empty() {
            // Bus-terminated traffic.
            c.push((1.0, routes.len()));
            routes.push(vec![proc_queue[p]]);
        }
    }

    let n_queues = queue_ids.len();
    let mut engine = Engine {
        cfg,
        queues: vec![VecDeque::new(); n_queues],
        capacity,
        queue_bus,
        tally: vec![Tally::default(); n_queues],
        buses,
        routes,
        choices,
        born: vec![0; arch.processors.len()],
        origin_lost: vec![0; arch.processors.len()],
        events: BinaryHeap::new(),
        seq: 0,
        now: 0.0,
        window_start: match cfg.horizon {
            Horizon::Time(t) => cfg.warmup * t,
            Horizon::Arrivals(_) => f64::INFINITY,
        },
    };
    let end = engine.run(arch);

    let window = (end - engine.window_start).max(0.0);
    let queues: Vec<QueueStats> = (0..n_queues)
        .map(|q| {
            let t = &engine.tally[q];
            let residual = engine.queues[q].iter().filter(|e| e.counted).count() as u64;
            let bus = &arch.buses[engine.queue_bus[q]].id;
            QueueStats {
                id: queue_ids[q].clone(),
                kind: match kinds[q] {
                    QueueKind::Processor { .. } => QueueClass::Processor,
                    QueueKind::Bridge { .. } => QueueClass::Bridge,
                },
                bus: bus.clone(),
                capacity: engine.capacity[q] as u32,
                arrivals: t.arrivals,
                served: t.served,
                lost: t.lost,
                timed_out: t.timed_out,
                residual,
                loss_rate: ratio(t.lost, t.arrivals),
                mean_wait: if t.served == 0 { 0.0 } else { t.wait_sum / t.served as f64 },
                mean_occupancy: if window > 0.0 { t.area / window } else { 0.0 },
            }
        })
        .collect();
    let processors: Vec<ProcessorStats> = arch
        .processors
        .iter()
        .enumerate()
        .map(|(p, proc_)| ProcessorStats {
            id: proc_.id.clone(),
            arrivals: engine.born[p],
            lost: engine.origin_lost[p],
            loss_rate: ratio(engine.origin_lost[p], engine.born[p]),
        })
        .collect();
    let total_arrivals: u64 = engine.born.iter().sum();
    let total_lost: u64 = engine.origin_lost.iter().sum();
    let served: u64 = engine.tally.iter().map(|t| t.served).sum();
    let wait: f64 = engine.tally.iter().map(|t| t.wait_sum).sum();
    Ok(SimulationReport {
        seed: cfg.seed,
        policy: cfg.policy.name().to_string(),
        horizon: cfg.horizon,
        window,
        queues,
        processors,
        total_arrivals,
        total_lost,
        aggregate_loss_rate: ratio(total_lost, total_arrivals),
        mean_wait: if served == 0 { 0.0 } else { wait / served as f64 },
        runtime_secs: started.elapsed().as_secs_f64(),
    })
}

impl Engine<'_> {
    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.events.push(Event {
            time,
            seq: self.seq,
            kind,
        });
        self.seq += 1;
    }

    fn counting(&self) -> bool {
        self.now >= self.window_start
    }

    /// Integrates the queue length over the measurement window up to `now`.
    fn touch(&mut self, q: usize) {
        let t = &mut self.tally[q];
        let from = t.last_change.max(self.window_start);
        if self.now > from {
            t.area += self.queues[q].len() as f64 * (self.now - from);
        }
        t.last_change = self.now;
    }

    /// Returns the end of the run.
    fn run(&mut self, arch: &Architecture) -> f64 {
        let mut streams: Vec<(Stream, Stream)> = (0..arch.processors.len())
            .map(|p| {
                (
                    Stream::new(self.cfg.seed, StreamKind::Interarrival, p),
                    Stream::new(self.cfg.seed, StreamKind::Destination, p),
                )
            })
            .collect();
        for (p, proc_) in arch.processors.iter().enumerate() {
            if proc_.arrival_rate > 0.0 {
                let dt = streams[p].0.exponential(proc_.arrival_rate);
                self.schedule(dt, EventKind::Arrival(p));
            }
        }
        let (time_limit, arrival_limit, warm_count) = match self.cfg.horizon {
            Horizon::Time(t) => (t, u64::MAX, 0),
            Horizon::Arrivals(n) => (f64::INFINITY, n, (self.cfg.warmup * n as f64).floor() as u64),
        };
        let mut births = 0u64;
        let end = loop {
            let Some(ev) = self.events.pop() else {
                break time_limit.min(self.now);
            };
            if ev.time >= time_limit {
                break time_limit;
            }
            self.now = ev.time;
            match ev.kind {
                EventKind::Arrival(p) => {
                    if births == arrival_limit {
                        break self.now;
                    }
                    if births == warm_count && self.window_start.is_infinite() {
                        self.window_start = self.now;
                    }
                    births += 1;
                    let rate = arch.processors[p].arrival_rate;
                    let next = self.now + streams[p].0.exponential(rate);
                    self.schedule(next, EventKind::Arrival(p));
                    let u = streams[p].1.uniform();
                    let choice = &self.choices[p];
                    let route = choice
                        .iter()
                        .find(|c| u < c.0)
                        .unwrap_or(choice.last().expect("at least one route"))
                        .1;
                    let counted = self.counting();
                    if counted {
                        self.born[p] += 1;
                    }
                    let entry = Entry {
                        entered: self.now,
                        origin: p as u32,
                        route: route as u32,
                        hop: 0,
                        counted,
                        origin_counted: counted,
                    };
                    self.enqueue(self.routes[route][0], entry);
                }
                EventKind::Completion(b) => self.complete(b),
            }
        };
        self.now = end;
        for q in 0..self.queues.len() {
            self.touch(q);
        }
        end
    }

    fn enqueue(&mut self, q: usize, mut entry: Entry) {
        entry.entered = self.now;
        entry.counted = self.counting();
        if entry.counted {
            self.tally[q].arrivals += 1;
        }
        if self.queues[q].len() >= self.capacity[q] {
            self.lose(q, &entry, false);
            return;
        }
        self.touch(q);
        self.queues[q].push_back(entry);
        self.decide(self.queue_bus[q]);
    }

    fn lose(&mut self, q: usize, entry: &Entry, timed_out: bool) {
        if entry.counted {
            self.tally[q].lost += 1;
            if timed_out {
                self.tally[q].timed_out += 1;
            }
        }
        if entry.origin_counted {
            self.origin_lost[entry.origin as usize] += 1;
        }
    }

    fn complete(&mut self, b: usize) {
        let q = self.buses[b].serving.take().expect("completion on a busy bus");
        self.touch(q);
        let entry = self.queues[q].pop_front().expect("request in service");
        if entry.counted {
            self.tally[q].served += 1;
            self.tally[q].wait_sum += self.now - entry.entered;
        }
        let route = &self.routes[entry.route as usize];
        let hop = entry.hop as usize + 1;
        if hop < route.len() {
            let next = route[hop];
            self.enqueue(
                next,
                Entry {
                    hop: hop as u32,
                    ..entry
                },
            );
        }
        self.decide(b);
    }

    /// Starts a service on an idle bus if its policy picks a queue.
    fn decide(&mut self, b: usize) {
        if self.buses[b].serving.is_some() {
            return;
        }
        if let Policy::Timeout { threshold } = self.cfg.policy {
            for k in 0..self.buses[b].queues.len() {
                let q = self.buses[b].queues[k];
                while let Some(&head) = self.queues[q].front() {
                    if self.now - head.entered <= threshold {
                        break;
                    }
                    self.touch(q);
                    self.queues[q].pop_front();
                    self.lose(q, &head, true);
                }
            }
        }
        let bus = &mut self.buses[b];
        if bus.queues.iter().all(|&q| self.queues[q].is_empty()) {
            return;
        }
        let pick = match &self.cfg.policy {
            Policy::Fcfs | Policy::Timeout { .. } => bus
                .queues
                .iter()
                .copied()
                .filter_map(|q| self.queues[q].front().map(|e| (q, e.entered)))
                .fold(None, |best: Option<(usize, f64)>, (q, t)| match best {
                    Some((_, bt)) if bt <= t => best,
                    _ => Some((q, t)),
                })
                .map(|(q, _)| q),
            Policy::LongestQueue => {
                let mut best: Option<(usize, usize)> = None;
                for &q in &bus.queues {
                    let n = self.queues[q].len();
                    if n > 0 && best.map_or(true, |(_, bn)| n > bn) {
                        best = Some((q, n));
                    }
                }
                best.map(|(q, _)| q)
            }
            Policy::Ctmdp { .. } => {
                let policy = bus.policy.as_ref().expect("checked at setup");
                let state = policy.state_of(bus.queues.iter().map(|&q| self.queues[q].len() as u32));
                let u = bus.arbitration.uniform();
                match policy.choose(state, u) {
                    Action::Idle => None,
                    Action::Serve(j) => Some(bus.queues[j]),
                }
            }
        };
        let Some(q) = pick else { return };
        debug_assert!(!self.queues[q].is_empty());
        bus.serving = Some(q);
        let done = self.now + bus.service.exponential(bus.mu);
        self.schedule(done, EventKind::Completion(b));
    }
}
