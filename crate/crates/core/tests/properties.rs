use std::collections::BTreeSet;

use bufplan::ctmdp::Action;
use bufplan::lp::{randomized_states, solve_occupation, verify_measure, PivotRule, SUPPORT_TOL};
use bufplan::policy::{equal_allocation, size_buffers};
use bufplan::split::{QueueDesc, QueueKind, Subsystem};
use bufplan::{
    build_model, formulate, parse_architecture, simulate, solve_lp, split, split_with_rates,
    Architecture, Horizon, LinearProgram, Policy, SimConfig, SimplexOptions,
};
use proptest::prelude::*;
use serde_json::json;

/// Buses in a chain of bridges (so every route is reachable), one to three
/// processors each, destinations anywhere.
fn architecture() -> impl Strategy<Value = Architecture> {
    (1usize..=4)
        .prop_flat_map(|buses| {
            (
                Just(buses),
                prop::collection::vec(1usize..=3, buses),
                prop::collection::vec(0.5f64..3.0, buses),
                any::<u64>(),
            )
        })
        .prop_map(|(buses, sizes, mus, salt)| {
            let names: Vec<String> = (0..sizes.iter().sum::<usize>()).map(|i| format!("p{i}")).collect();
            let mut next = 0;
            let mut bus_json = Vec::new();
            for b in 0..buses {
                let procs: Vec<_> = (0..sizes[b])
                    .map(|k| {
                        let id = next + k;
                        let h = salt.wrapping_mul(id as u64 + 1).rotate_left(17);
                        let to = &names[(h % names.len() as u64) as usize];
                        let dest = if h % 3 == 0 { json!([]) } else { json!([{"to": to, "p": 1.0}]) };
                        json!({"id": names[id], "arrival_rate": 0.1 + (h % 7) as f64 * 0.1, "destinations": dest})
                    })
                    .collect();
                next += sizes[b];
                bus_json.push(json!({"id": format!("b{b}"), "service_rate": mus[b], "processors": procs}));
            }
            let bridges: Vec<_> = (1..buses)
                .map(|b| json!({"id": format!("x{b}"), "between": [format!("b{}", b - 1), format!("b{b}")]}))
                .collect();
            let text = json!({"budget": 64, "buses": bus_json, "bridges": bridges}).to_string();
            parse_architecture(&text).expect("generated architecture is valid")
        })
}

fn subsystem(rates: &[f64], mu: f64) -> Subsystem {
    Subsystem {
        id: "s".into(),
        bus: "s".into(),
        service_rate: mu,
        queues: rates
            .iter()
            .enumerate()
            .map(|(j, &r)| QueueDesc {
                id: format!("q{j}"),
                kind: QueueKind::Processor { processor: format!("q{j}") },
                arrival_rate: r,
            })
            .collect(),
    }
}

fn small_model() -> impl Strategy<Value = (Vec<f64>, f64, Vec<u32>)> {
    (1usize..=3).prop_flat_map(|m| {
        (
            prop::collection::vec(0.0f64..2.0, m),
            0.5f64..3.0,
            prop::collection::vec(1u32..=4, m),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_accounts_for_every_queue(arch in architecture()) {
        let plan = split(&arch);
        let ids = plan.queue_ids();
        let unique: BTreeSet<&String> = ids.iter().collect();
        prop_assert_eq!(unique.len(), ids.len());
        let processors = plan.queues().filter(|q| matches!(q.kind, QueueKind::Processor { .. })).count();
        prop_assert_eq!(processors, arch.processors.len());
        let bridge_queues = plan.queues().filter(|q| matches!(q.kind, QueueKind::Bridge { .. })).count();
        prop_assert_eq!(bridge_queues, 2 * arch.bridges.len());
        prop_assert_eq!(plan.subsystems.len(), arch.buses.len());
    }

    #[test]
    fn generator_rows_are_consistent((rates, mu, caps) in small_model()) {
        let model = build_model(&subsystem(&rates, mu), &caps).unwrap();
        let expected: usize = caps.iter().map(|&c| c as usize + 1).product();
        prop_assert_eq!(model.state_count(), expected);
        for x in 0..model.state_count() {
            prop_assert_eq!(model.state_index(&model.levels(x)), x);
            let levels = model.levels(x);
            let actions: Vec<Action> = model.pair_range(x).map(|k| model.pairs()[k].action).collect();
            prop_assert!(actions.contains(&Action::Idle));
            for (j, &n) in levels.iter().enumerate() {
                prop_assert_eq!(actions.contains(&Action::Serve(j)), n > 0);
            }
            for k in model.pair_range(x) {
                let p = model.pairs()[k];
                let out: f64 = model.transitions(k).iter().map(|&(_, r)| r).sum();
                prop_assert!((out - p.out_rate).abs() <= 1e-12 * (1.0 + out));
                prop_assert!(model.transitions(k).iter().all(|&(y, r)| y != x && r > 0.0));
                let lost: f64 = levels.iter().zip(&caps).zip(&rates)
                    .filter(|((n, c), _)| n == c).map(|(_, r)| r).sum();
                prop_assert!((p.cost - lost).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn occupation_measures_are_feasible((rates, mu, caps) in small_model(), frac in 0.2f64..1.5) {
        let model = build_model(&subsystem(&rates, mu), &caps).unwrap();
        let top: u64 = caps.iter().map(|&c| c as u64).sum();
        let budget = frac * top as f64;
        let stacked = formulate(std::slice::from_ref(&model), 100, &[budget / 100.0]);
        // Occupancy zero is reachable only if no queue ever fills, so small
        // budgets may be infeasible; feasible ones must verify.
        if let Ok(m) = solve_occupation(&stacked, &SimplexOptions::default()) {
            let report = verify_measure(&model, &m.z[0], Some(budget)).unwrap();
            prop_assert!(report.is_valid(), "{:?}", report);
            prop_assert!(randomized_states(&model, &m.z[0], SUPPORT_TOL) <= 1);
        }
    }

    #[test]
    fn allocations_spend_the_budget(
        masses in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 1..6), 1..6),
        extra in 0u64..40,
        eps in 0.001f64..0.5,
    ) {
        let marginals: Vec<Vec<f64>> = masses
            .iter()
            .map(|m| {
                let s: f64 = m.iter().sum();
                if s > 0.0 { m.iter().map(|v| v / s).collect() } else { vec![1.0] }
            })
            .collect();
        let ids: Vec<String> = (0..marginals.len()).map(|j| format!("q{j}")).collect();
        let budget = ids.len() as u64 + extra;
        let alloc = size_buffers(&ids, &marginals, budget, eps).unwrap();
        prop_assert_eq!(alloc.queues.iter().map(|q| q.capacity as u64).sum::<u64>(), budget);
        prop_assert_eq!(alloc.total, budget);
        prop_assert!(alloc.queues.iter().all(|q| q.capacity >= 1));
        let equal = equal_allocation(&ids, budget).unwrap();
        let caps: Vec<u32> = equal.queues.iter().map(|q| q.capacity).collect();
        prop_assert!(caps.iter().max().unwrap() - caps.iter().min().unwrap() <= 1);
    }

    #[test]
    fn simplex_is_no_worse_than_a_known_point(
        n in 2usize..=6,
        seed in any::<u64>(),
    ) {
        // Deterministic coefficients from the seed; x0 is feasible by
        // construction and the bounding row keeps the program bounded.
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) * 4.0 - 2.0
        };
        let x0: Vec<f64> = (0..n).map(|_| next().abs()).collect();
        let objective: Vec<f64> = (0..n).map(|_| next()).collect();
        let mut lp = LinearProgram::new(objective.clone());
        for _ in 0..2 {
            let row: Vec<f64> = (0..n).map(|_| next()).collect();
            let rhs = row.iter().zip(&x0).map(|(a, x)| a * x).sum::<f64>() + next().abs();
            lp.add_le_dense(&row, rhs);
        }
        let row: Vec<f64> = (0..n).map(|_| next()).collect();
        lp.add_eq_dense(&row, row.iter().zip(&x0).map(|(a, x)| a * x).sum());
        lp.add_le_dense(&vec![1.0; n], x0.iter().sum::<f64>() + 1.0);
        let at_x0: f64 = objective.iter().zip(&x0).map(|(c, x)| c * x).sum();
        for rule in [PivotRule::Bland, PivotRule::Dantzig { degenerate_limit: 50 }] {
            let sol = solve_lp(&lp, &SimplexOptions { rule, ..Default::default() }).unwrap();
            prop_assert!(sol.objective <= at_x0 + 1e-9 * (1.0 + at_x0.abs()));
            prop_assert!(sol.x.iter().all(|&v| v >= -1e-9));
            prop_assert!(sol.iterations < sol.iteration_cap);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn simulation_conserves_and_repeats(arch in architecture(), seed in any::<u64>(), longest in any::<bool>()) {
        let plan = split_with_rates(&arch).unwrap();
        let alloc = equal_allocation(&plan.queue_ids(), arch.total_budget.max(plan.queue_ids().len() as u64)).unwrap();
        let policy = if longest { Policy::LongestQueue } else { Policy::Fcfs };
        let cfg = SimConfig::new(alloc, policy, Horizon::Time(300.0), seed);
        let a = simulate(&arch, &cfg).unwrap();
        prop_assert!(a.is_conserved());
        for q in &a.queues {
            prop_assert_eq!(q.arrivals, q.served + q.lost + q.residual);
            prop_assert!(q.timed_out <= q.lost);
        }
        let b = simulate(&arch, &cfg).unwrap();
        prop_assert_eq!(a.to_json(), b.to_json());
    }
}
