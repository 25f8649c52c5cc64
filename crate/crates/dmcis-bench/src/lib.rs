//! Shared scenario builders for the benchmarks.

use dmcis_core::{generate, Scenario};

/// A mid-sized generated deployment with a fixed seed, so benchmark numbers
/// are comparable across runs and machines.
pub fn benchmark_scenario() -> Scenario {
    generate(400)
}

/// A batch of distinct deployments for averaging out per-layout quirks.
pub fn scenario_batch(n: u64) -> Vec<Scenario> {
    (0..n).map(generate).collect()
}
