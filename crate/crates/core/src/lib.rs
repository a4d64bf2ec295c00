//! Optimal finite-buffer allocation for bus architectures with bridges.
//!
//! The pipeline: parse an [`arch::Architecture`], cut its bridges into
//! single-bus subsystems ([`split`]), build one constrained CTMDP per
//! subsystem ([`ctmdp`]), solve the stacked occupation-measure program
//! ([`lp`]), turn the optimal measure into an arbitration policy and buffer
//! capacities ([`policy`]) and check the result by simulating the unsplit
//! architecture ([`sim`]). [`harness`] drives the whole loop over a budget
//! ladder.

pub mod arch;
pub mod ctmdp;
pub mod harness;
pub mod lp;
pub mod policy;
pub mod sim;
pub mod split;

#[cfg(test)]
mod testutil;

pub use arch::{parse_architecture, ArchError, Architecture};
pub use ctmdp::{build_model, Action, CtmdpModel, ModelError};
pub use harness::{
    run_experiment, summarize, Arm, ExperimentResult, ExperimentSpec, HarnessError, SolveSettings,
    Summary,
};
pub use lp::{formulate, solve_lp, LinearProgram, LpError, LpSolution, SimplexOptions};
pub use policy::{size_buffers, BufferAllocation, StationaryPolicy};
pub use sim::{simulate, Horizon, Policy, SimConfig, SimError, SimulationReport};
pub use split::{split, split_with_rates, SplitPlan, Subsystem};
