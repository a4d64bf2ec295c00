//! Bridge-cut decomposition of an architecture into single-bus subsystems.
//!
//! A bridge couples the dynamics of the two buses it joins. Cutting it and
//! placing an ingress buffer on each side leaves every bus with a set of
//! independent arrival streams, which is what the per-subsystem CTMDP needs.

use serde::Serialize;

use crate::arch::{validate_routes, Architecture, UnreachableError};

/// Which side of the cut a bridge buffer sits on. Every buffer produced by
/// [`split`] is the ingress buffer of the subsystem that owns it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeDirection {
    Ingress,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QueueKind {
    Processor {
        processor: String,
    },
    Bridge {
        bridge: String,
        from_bus: String,
        direction: BridgeDirection,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueDesc {
    pub id: String,
    #[serde(flatten)]
    pub kind: QueueKind,
    pub arrival_rate: f64,
}

impl QueueDesc {
    pub fn is_bridge(&self) -> bool {
        matches!(self.kind, QueueKind::Bridge { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Subsystem {
    pub id: String,
    pub bus: String,
    pub service_rate: f64,
    /// Processor queues in document order, then bridge buffers sorted by id.
    pub queues: Vec<QueueDesc>,
}

impl Subsystem {
    pub fn total_arrival_rate(&self) -> f64 {
        self.queues.iter().map(|q| q.arrival_rate).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BridgePair {
    pub bridge: String,
    /// Buffer for traffic `bus_a -> bus_b` (owned by `bus_b`'s subsystem) and
    /// the reverse buffer.
    pub queues: (String, String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitPlan {
    pub subsystems: Vec<Subsystem>,
    pub bridge_pairs: Vec<BridgePair>,
}

impl SplitPlan {
    /// All queues in subsystem order.
    pub fn queues(&self) -> impl Iterator<Item = &QueueDesc> {
        self.subsystems.iter().flat_map(|s| s.queues.iter())
    }

    pub fn queue_ids(&self) -> Vec<String> {
        self.queues().map(|q| q.id.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Id of the buffer that carries traffic across `bridge` from `from` into `to`.
pub fn bridge_queue_id(bridge: &str, from: &str, to: &str) -> String {
    format!("{bridge}:{from}>{to}")
}

/// Every bus pair joined by a bridge, as sorted id pairs in sorted order.
pub fn detect_coupling(arch: &Architecture) -> Vec<(String, String)> {
    let mut pairs: Vec<(String, String)> = arch
        .bridges
        .iter()
        .map(|br| {
            let a = arch.buses[br.bus_a].id.clone();
            let b = arch.buses[br.bus_b].id.clone();
            if a <= b {
                (a, b)
            } else {
                (b, a)
            }
        })
        .collect();
    pairs.sort();
    pairs
}

/// One subsystem per bus. Bridge buffer rates start at zero; see
/// [`estimate_bridge_rates`].
pub fn split(arch: &Architecture) -> SplitPlan {
    let subsystems = arch
        .buses
        .iter()
        .enumerate()
        .map(|(b, bus)| {
            let mut queues: Vec<QueueDesc> = bus
                .processors
                .iter()
                .map(|&p| {
                    let proc_ = &arch.processors[p];
                    QueueDesc {
                        id: proc_.id.clone(),
                        kind: QueueKind::Processor {
                            processor: proc_.id.clone(),
                        },
                        arrival_rate: proc_.arrival_rate,
                    }
                })
                .collect();
            let mut ingress: Vec<QueueDesc> = arch
                .neighbors(b)
                .into_iter()
                .map(|(from, k)| {
                    let from_id = &arch.buses[from].id;
                    QueueDesc {
                        id: bridge_queue_id(&arch.bridges[k].id, from_id, &bus.id),
                        kind: QueueKind::Bridge {
                            bridge: arch.bridges[k].id.clone(),
                            from_bus: from_id.clone(),
                            direction: BridgeDirection::Ingress,
                        },
                        arrival_rate: 0.0,
                    }
                })
                .collect();
            ingress.sort_by(|x, y| x.id.cmp(&y.id));
            queues.extend(ingress);
            Subsystem {
                id: bus.id.clone(),
                bus: bus.id.clone(),
                service_rate: bus.service_rate,
                queues,
            }
        })
        .collect();

    let bridge_pairs = arch
        .bridges
        .iter()
        .map(|br| {
            let (a, b) = (&arch.buses[br.bus_a].id, &arch.buses[br.bus_b].id);
            BridgePair {
                bridge: br.id.clone(),
                queues: (
                    bridge_queue_id(&br.id, a, b),
                    bridge_queue_id(&br.id, b, a),
                ),
            }
        })
        .collect();

    SplitPlan {
        subsystems,
        bridge_pairs,
    }
}

/// Fills bridge buffer rates with the zero-loss offered load of every route
/// crossing them.
pub fn estimate_bridge_rates(
    arch: &Architecture,
    mut plan: SplitPlan,
) -> Result<SplitPlan, UnreachableError> {
    let routes = validate_routes(arch)?;
    for sub in &mut plan.subsystems {
        for q in sub.queues.iter_mut().filter(|q| q.is_bridge()) {
            q.arrival_rate = 0.0;
        }
    }
    for route in &routes {
        let rate = route.rate(arch);
        for (k, from, to) in route.crossings() {
            let id = bridge_queue_id(&arch.bridges[k].id, &arch.buses[from].id, &arch.buses[to].id);
            let q = plan
                .subsystems
                .iter_mut()
                .flat_map(|s| s.queues.iter_mut())
                .find(|q| q.id == id)
                .expect("split creates a buffer for every bridge direction");
            q.arrival_rate += rate;
        }
    }
    Ok(plan)
}

/// `split` followed by `estimate_bridge_rates`.
pub fn split_with_rates(arch: &Architecture) -> Result<SplitPlan, UnreachableError> {
    estimate_bridge_rates(arch, split(arch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::parse_architecture;
    use crate::testutil::{chain3, FIGURE1};
    use std::collections::HashMap;

    fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn coupling_lists() {
        let single = parse_architecture(
            r#"{"budget": 2, "buses": [{"id": "a", "service_rate": 1.0, "processors": [
                {"id": "p", "arrival_rate": 1.0, "destinations": []}]}], "bridges": []}"#,
        )
        .unwrap();
        assert!(detect_coupling(&single).is_empty());
        let fig1 = parse_architecture(FIGURE1).unwrap();
        assert_eq!(
            detect_coupling(&fig1),
            pairs(&[("b", "f"), ("b", "g"), ("f", "g")])
        );
        assert_eq!(
            detect_coupling(&chain3(1.0, 0.5)),
            pairs(&[("a", "b"), ("b", "c")])
        );
    }

    #[test]
    fn single_bus_split() {
        let arch = parse_architecture(
            r#"{"budget": 4, "buses": [{"id": "a", "service_rate": 2.0, "processors": [
                {"id": "p1", "arrival_rate": 1.0, "destinations": [{"to": "p2", "p": 1.0}]},
                {"id": "p2", "arrival_rate": 1.0, "destinations": []}]}], "bridges": []}"#,
        )
        .unwrap();
        let plan = split(&arch);
        assert_eq!(plan.subsystems.len(), 1);
        assert_eq!(plan.subsystems[0].queues.len(), 2);
        assert!(plan.bridge_pairs.is_empty());
        assert!(plan.queues().all(|q| !q.is_bridge()));
    }

    #[test]
    fn figure1_splits_into_four() {
        let arch = parse_architecture(FIGURE1).unwrap();
        let plan = split(&arch);
        assert_eq!(plan.subsystems.len(), 4);
        assert_eq!(plan.bridge_pairs.len(), 3);
        let b = plan.subsystems.iter().find(|s| s.bus == "b").unwrap();
        // Processors p2, p3 plus buffers from f and g.
        assert_eq!(b.queues.len(), 4);
        assert_eq!(b.queues.iter().filter(|q| q.is_bridge()).count(), 2);
    }

    #[test]
    fn chain_middle_has_two_bridge_queues() {
        let arch = chain3(1.0, 0.5);
        let plan = split(&arch);
        assert_eq!(plan.subsystems.len(), 3);
        // Components after cutting every bridge are the single buses.
        let bridge_counts: Vec<usize> = plan
            .subsystems
            .iter()
            .map(|s| s.queues.iter().filter(|q| q.is_bridge()).count())
            .collect();
        assert_eq!(bridge_counts, vec![1, 2, 1]);
        // Each bridge yields exactly two buffers, one per side.
        for pair in &plan.bridge_pairs {
            let owner = |id: &str| {
                plan.subsystems
                    .iter()
                    .position(|s| s.queues.iter().any(|q| q.id == id))
                    .unwrap()
            };
            assert_ne!(owner(&pair.queues.0), owner(&pair.queues.1));
        }
    }

    #[test]
    fn no_cross_traffic_means_zero_bridge_rates() {
        let arch = parse_architecture(
            r#"{"budget": 10, "buses": [
            {"id": "a", "service_rate": 1.0, "processors": [{"id": "p1", "arrival_rate": 1.0, "destinations": []}]},
            {"id": "b", "service_rate": 1.0, "processors": [{"id": "p2", "arrival_rate": 1.0, "destinations": []}]}],
            "bridges": [{"id": "x", "between": ["a", "b"]}]}"#,
        )
        .unwrap();
        let plan = split_with_rates(&arch).unwrap();
        assert!(plan
            .queues()
            .filter(|q| q.is_bridge())
            .all(|q| q.arrival_rate == 0.0));
    }

    #[test]
    fn single_crossing_route_rate() {
        let arch = parse_architecture(
            r#"{"budget": 10, "buses": [
            {"id": "a", "service_rate": 1.0, "processors": [{"id": "p1", "arrival_rate": 2.0,
                "destinations": [{"to": "p2", "p": 0.5}, {"to": "p3", "p": 0.5}]},
                {"id": "p3", "arrival_rate": 1.0, "destinations": []}]},
            {"id": "b", "service_rate": 1.0, "processors": [{"id": "p2", "arrival_rate": 1.0, "destinations": []}]}],
            "bridges": [{"id": "x", "between": ["a", "b"]}]}"#,
        )
        .unwrap();
        let plan = split_with_rates(&arch).unwrap();
        let rate = |id: &str| plan.queues().find(|q| q.id == id).unwrap().arrival_rate;
        assert_eq!(rate("x:a>b"), 1.0);
        assert_eq!(rate("x:b>a"), 0.0);
    }

    #[test]
    fn figure1_rates_match_per_route_accumulation() {
        // Symmetric all-to-all traffic on the four-bus sample set.
        let arch = crate::testutil::all_to_all_figure1();
        let plan = split_with_rates(&arch).unwrap();

        // Independent accumulation: walk each route's hop list directly.
        let mut expected: HashMap<String, f64> = HashMap::new();
        for r in validate_routes(&arch).unwrap() {
            let rate = arch.processors[r.source].arrival_rate * r.probability;
            let hops = &r.hops;
            let mut i = 1;
            while i + 1 < hops.len() {
                let (crate::arch::Hop::Bus(a), crate::arch::Hop::Bridge(k), crate::arch::Hop::Bus(b)) =
                    (hops[i - 1], hops[i], hops[i + 1])
                else {
                    panic!("malformed route")
                };
                let id = format!(
                    "{}:{}>{}",
                    arch.bridges[k].id, arch.buses[a].id, arch.buses[b].id
                );
                *expected.entry(id).or_default() += rate;
                i += 2;
            }
        }
        for q in plan.queues().filter(|q| q.is_bridge()) {
            let want = expected.get(&q.id).copied().unwrap_or(0.0);
            assert!((q.arrival_rate - want).abs() < 1e-12, "{}", q.id);
        }
        // Symmetry: every direction of every bridge carries the same load.
        let first = plan.queues().find(|q| q.is_bridge()).unwrap().arrival_rate;
        assert!(first > 0.0);
    }

    #[test]
    fn offered_load_is_conserved_at_final_hops() {
        let arch = crate::testutil::all_to_all_figure1();
        let plan = split_with_rates(&arch).unwrap();
        let routes = validate_routes(&arch).unwrap();
        let total_in: f64 = arch
            .processors
            .iter()
            .filter(|p| !p.destinations.is_empty())
            .map(|p| p.arrival_rate)
            .sum();
        // Final-hop queue of a route: the source queue for same-bus traffic,
        // else the last bridge buffer it enters.
        let mut final_hop: HashMap<String, f64> = HashMap::new();
        for r in &routes {
            let id = match r.crossings().last() {
                None => arch.processors[r.source].id.clone(),
                Some(&(k, a, b)) => bridge_queue_id(&arch.bridges[k].id, &arch.buses[a].id, &arch.buses[b].id),
            };
            *final_hop.entry(id).or_default() += r.rate(&arch);
        }
        let total_final: f64 = final_hop.values().sum();
        assert!((total_in - total_final).abs() < 1e-12);
        // And no bridge buffer is offered more than what routes push into it.
        for q in plan.queues().filter(|q| q.is_bridge()) {
            assert!(q.arrival_rate <= total_in + 1e-12);
        }
    }

    #[test]
    fn bridge_free_iff_processor_only_subsystems() {
        for arch in [
            parse_architecture(FIGURE1).unwrap(),
            chain3(1.0, 0.5),
            crate::testutil::single_queue(1.0, 2.0, 5),
        ] {
            let plan = split(&arch);
            assert_eq!(
                detect_coupling(&arch).is_empty(),
                plan.queues().all(|q| !q.is_bridge())
            );
            assert_eq!(plan.subsystems.len(), arch.buses.len());
        }
    }
}
