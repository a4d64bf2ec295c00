//! Benchmark fixtures for the criterion suites in `benches/`.

use bufplan::harness::{build_models, initial_weights, SolveSettings};
use bufplan::{parse_architecture, split_with_rates, Architecture, CtmdpModel};

/// A shipped architecture from the core crate's data directory.
pub fn architecture(name: &str) -> Architecture {
    let path = format!("{}/../core/data/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    parse_architecture(&text).expect("shipped architecture parses")
}

/// Subsystem models at `budget` under the initial weights, with their
/// weights.
pub fn models(name: &str, budget: u64) -> Vec<(CtmdpModel, f64)> {
    let plan = split_with_rates(&architecture(name)).expect("routable");
    let w = initial_weights(&plan, budget);
    let models = build_models(&plan, budget, &w, &SolveSettings::default()).expect("models build");
    models.into_iter().zip(w).collect()
}
