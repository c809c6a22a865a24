//! Shared fixtures for the criterion benches.

use std::sync::Arc;

use dinsys_core::problems::{build, initial_data};
use dinsys_core::{
    DualVec, GridSpec, ProblemConfig, ProblemId, SolverConfig, StateVec, SystemSpec,
};

/// A built problem with its default initial data.
pub struct Fixture {
    pub system: Arc<SystemSpec>,
    pub u0: StateVec,
    pub v0: StateVec,
}

/// Problem `id` on a 1D grid with `nodes` nodes (ignored for the oscillator).
pub fn fixture(id: ProblemId, nodes: usize) -> Fixture {
    let mut cfg = ProblemConfig::new(id);
    cfg.grid = GridSpec::line(1.0, nodes).expect("bench grid");
    let system = Arc::new(build(&cfg).expect("bench problem builds"));
    let (u0, v0) = initial_data(&cfg).expect("bench initial data");
    Fixture { system, u0, v0 }
}

/// Solver settings for `steps` steps on `[0, 0.1]`.
pub fn solver(steps: usize) -> SolverConfig {
    SolverConfig::new(0.1 / steps as f64, 0.1)
}

/// Deterministic dual vector with entries of size about `scale`.
pub fn dual_probe(n: usize, scale: f64) -> DualVec {
    let values: Vec<f64> = (0..n)
        .map(|i| scale * ((i as f64 + 1.0) * 0.7).sin())
        .collect();
    DualVec::from_slice(&values)
}
