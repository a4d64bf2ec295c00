//! Fixtures shared by unit tests.

use crate::arch::{parse_architecture, Architecture};

pub const FIGURE1: &str = include_str!("../data/figure1.json");

/// One bus, one processor with bus-terminated traffic.
pub fn single_queue(lambda: f64, mu: f64, budget: u64) -> Architecture {
    parse_architecture(&format!(
        r#"{{"budget": {budget}, "buses": [{{"id": "a", "service_rate": {mu:?}, "processors": [
            {{"id": "p1", "arrival_rate": {lambda:?}, "destinations": []}}]}}], "bridges": []}}"#
    ))
    .unwrap()
}

/// Buses a - b - c, one processor each; `p_cross` of a's traffic goes to c.
pub fn chain3(lambda: f64, p_cross: f64) -> Architecture {
    let keep = 1.0 - p_cross;
    parse_architecture(&format!(
        r#"{{"budget": 30, "buses": [
        {{"id": "a", "service_rate": 2.0, "processors": [
            {{"id": "pa", "arrival_rate": {lambda:?}, "destinations": [{{"to": "pc", "p": {p_cross:?}}}, {{"to": "pa", "p": {keep:?}}}]}}]}},
        {{"id": "b", "service_rate": 2.0, "processors": [
            {{"id": "pb", "arrival_rate": {lambda:?}, "destinations": [{{"to": "pa", "p": 1.0}}]}}]}},
        {{"id": "c", "service_rate": 2.0, "processors": [
            {{"id": "pc", "arrival_rate": {lambda:?}, "destinations": []}}]}}],
        "bridges": [{{"id": "ab", "between": ["a", "b"]}}, {{"id": "bc", "between": ["b", "c"]}}]}}"#
    ))
    .unwrap()
}

/// four-bus sample set with uniform all-to-all traffic between processors.
pub fn all_to_all_figure1() -> Architecture {
    let mut arch = parse_architecture(FIGURE1).unwrap();
    // Bus a is an island; everyone else talks to everyone else.
    let a = arch.bus_index("a").unwrap();
    let ids: Vec<String> = arch
        .processors
        .iter()
        .filter(|p| p.bus != a)
        .map(|p| p.id.clone())
        .collect();
    let p = 1.0 / (ids.len() - 1) as f64;
    for proc_ in arch.processors.iter_mut().filter(|p| p.bus != a) {
        proc_.arrival_rate = 0.3;
        proc_.destinations = ids
            .iter()
            .filter(|id| **id != proc_.id)
            .map(|id| crate::arch::Destination { to: id.clone(), p })
            .collect();
    }
    arch.validate().unwrap();
    arch
}

/// Single-bus subsystem with queues `q0, q1, ...` at the given rates.
pub fn subsystem(rates: &[f64], mu: f64) -> crate::split::Subsystem {
    use crate::split::{QueueDesc, QueueKind, Subsystem};
    Subsystem {
        id: "s".into(),
        bus: "s".into(),
        service_rate: mu,
        queues: rates
            .iter()
            .enumerate()
            .map(|(j, &r)| QueueDesc {
                id: format!("q{j}"),
                kind: QueueKind::Processor {
                    processor: format!("q{j}"),
                },
                arrival_rate: r,
            })
            .collect(),
    }
}
