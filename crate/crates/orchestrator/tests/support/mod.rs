#![allow(dead_code)]

use chainbox_core::chain::GenesisConfig;
use chainbox_core::wire::LatencyModel;
use chainbox_core::{ExperimentConfig, RunMode, StopCondition, TopologySpec};

/// Small simulated network: blocks every ~200 ms of simulated time.
pub fn simulated(topology: TopologySpec, stop: StopCondition, seed: u64) -> ExperimentConfig {
    let n = topology.n;
    ExperimentConfig {
        name: format!("test-{}", topology.kind.name()),
        n,
        topology,
        genesis: GenesisConfig::new(1, 200 * n as u64),
        target_interval_ms: 200,
        stop,
        mode: RunMode::Simulated {
            seed,
            latency: LatencyModel { base_ms: 20.0, jitter_ms: 10.0, seed },
            tick_us: 2_000,
        },
        hashrate: 1000.0,
    }
}

pub fn ring3(height: u64) -> ExperimentConfig {
    simulated(TopologySpec::ring(3).unwrap(), StopCondition::Height(height), 11)
}

pub fn color_of(hash: &chainbox_core::Hash32) -> String {
    let b = hash.as_bytes();
    format!("#{:02x}{:02x}{:02x}", b[0], b[1], b[2])
}
