//! Experiment configuration, difficulty calibration and the simulated run
//! driver.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainStore, GenesisConfig};
use crate::eventlog::EventLog;
use crate::node::{Miner, NodeStatus};
use crate::sim::{SimConfig, SimError, Simulation, DEFAULT_TICK_US};
use crate::topology::TopologySpec;
use crate::wire::LatencyModel;

/// Difficulty used when only counting attempts; success is negligible.
pub const MEASURE_DIFFICULTY: u64 = 1 << 32;

/// Settling rounds allowed after the stop condition (see
/// [`Simulation::stop_and_settle`]).
pub const MAX_SETTLE_ROUNDS: usize = 16;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCondition {
    /// Stop once any node's head reaches this height.
    Height(u64),
    DurationMs(u64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RunMode {
    Multiprocess,
    Simulated {
        seed: u64,
        #[serde(default)]
        latency: LatencyModel,
        /// Simulated microseconds per mining tick.
        #[serde(default = "default_tick_us")]
        tick_us: u64,
    },
}

fn default_tick_us() -> u64 {
    DEFAULT_TICK_US
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub n: usize,
    pub topology: TopologySpec,
    pub genesis: GenesisConfig,
    pub target_interval_ms: u64,
    pub stop: StopCondition,
    pub mode: RunMode,
    /// Nonce attempts per second per node. Simulated nodes run at exactly
    /// this rate; real nodes are capped at it.
    pub hashrate: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidParameter(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.n != self.topology.n {
            return bad(format!("n is {} but the topology has {} nodes", self.n, self.topology.n));
        }
        let violations = self.topology.clone().normalized().map(|t| t.validate());
        match violations {
            Ok(v) if v.is_empty() => {}
            Ok(v) => return bad(format!("topology violations: {v:?}")),
            Err(e) => return bad(e.to_string()),
        }
        if self.target_interval_ms == 0 {
            return bad("target_interval_ms must be positive".into());
        }
        match self.stop {
            StopCondition::Height(0) => return bad("stop height must be positive".into()),
            StopCondition::DurationMs(0) => return bad("stop duration must be positive".into()),
            _ => {}
        }
        if self.genesis.difficulty == 0 {
            return bad("difficulty must be positive".into());
        }
        if !(self.hashrate.is_finite() && self.hashrate > 0.0) {
            return bad("hashrate must be positive".into());
        }
        if let RunMode::Simulated { latency, tick_us, .. } = &self.mode {
            latency.validate().map_err(|e| ExperimentError::InvalidParameter(e.to_string()))?;
            if *tick_us == 0 {
                return bad("tick_us must be positive".into());
            }
        }
        Ok(())
    }

    pub fn node_ids(&self) -> Vec<String> {
        (0..self.n).map(|i| format!("n{i}")).collect()
    }

    /// Replaces the genesis difficulty with the calibrated one.
    pub fn calibrate(&mut self) -> Result<Calibration, ExperimentError> {
        let c = calibrate_difficulty(self.n, self.hashrate, self.target_interval_ms)?;
        self.genesis.difficulty = c.difficulty;
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calibration {
    pub difficulty: u64,
    /// True when the raw value was below 1.
    pub clamped: bool,
}

/// `D = round(n × hashrate × target / 1000)`: with per-attempt success 1/D
/// and `n × hashrate` attempts per second, the network finds a block every
/// `target_interval_ms` on average.
pub fn calibrate_difficulty(n: usize, hashrate: f64, target_interval_ms: u64) -> Result<Calibration, ExperimentError> {
    if n == 0 || target_interval_ms == 0 || !(hashrate.is_finite() && hashrate > 0.0) {
        return Err(ExperimentError::InvalidParameter("calibration inputs must be positive".into()));
    }
    let raw = (n as f64 * hashrate * target_interval_ms as f64 / 1000.0).round();
    if raw < 1.0 {
        log::warn!("calibrated difficulty {raw} is below 1; using 1");
        return Ok(Calibration { difficulty: 1, clamped: true });
    }
    if raw >= u64::MAX as f64 {
        return Err(ExperimentError::InvalidParameter("calibrated difficulty overflows".into()));
    }
    Ok(Calibration { difficulty: raw as u64, clamped: false })
}

fn check_measure_duration(duration: Duration) -> Result<(), ExperimentError> {
    if duration < Duration::from_secs(1) {
        return Err(ExperimentError::InvalidParameter("measurement needs at least 1 s".into()));
    }
    Ok(())
}

/// Attempts per second of a simulated node paced at `hashrate`, counted over
/// `duration` of simulated time.
pub fn measure_simulated_hashrate(hashrate: f64, duration: Duration) -> Result<f64, ExperimentError> {
    check_measure_duration(duration)?;
    let genesis = GenesisConfig::new(0, MEASURE_DIFFICULTY);
    let config = SimConfig::new(genesis, hashrate, LatencyModel::default(), 0);
    let mut sim = Simulation::new(&config, &["probe".to_string()])?;
    sim.start_mining_all();
    let end = duration.as_micros() as u64;
    sim.run_until_time(end - 1);
    Ok(sim.hash_attempts(0) as f64 / duration.as_secs_f64())
}

/// Attempts per second this machine manages on one thread, over `duration`
/// of wall-clock time.
pub fn measure_local_hashrate(duration: Duration) -> Result<f64, ExperimentError> {
    check_measure_duration(duration)?;
    let store =
        ChainStore::with_genesis(GenesisConfig::new(0, MEASURE_DIFFICULTY).genesis_block()).expect("genesis is valid");
    let mut miner = Miner::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let start = Instant::now();
    loop {
        for _ in 0..4096 {
            miner.attempt(&store, "probe", MEASURE_DIFFICULTY, &mut rng, 0);
        }
        let elapsed = start.elapsed();
        if elapsed >= duration {
            return Ok(miner.attempts() as f64 / elapsed.as_secs_f64());
        }
    }
}

/// A simulated experiment that can be advanced in slices, e.g. to pace it
/// against the wall clock.
pub struct SimulatedRun {
    config: ExperimentConfig,
    sim: Simulation,
    finished: bool,
    settle_rounds: usize,
}

impl SimulatedRun {
    pub fn new(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        let RunMode::Simulated { seed, latency, tick_us } = config.mode.clone() else {
            return Err(ExperimentError::InvalidParameter("config is not in simulated mode".into()));
        };
        let sim_config =
            SimConfig { genesis: config.genesis.clone(), latency, seed, hashrate: config.hashrate, tick_us };
        let mut sim = Simulation::with_topology(&sim_config, &config.topology)?;
        sim.start_mining_all();
        Ok(SimulatedRun { config, sim, finished: false, settle_rounds: 0 })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn now_us(&self) -> u64 {
        self.sim.now_us()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn settle_rounds(&self) -> usize {
        self.settle_rounds
    }

    pub fn statuses(&self) -> Vec<NodeStatus> {
        self.sim.statuses()
    }

    pub fn stop_reached(&self) -> bool {
        match self.config.stop {
            StopCondition::Height(h) => self.sim.max_height() >= h,
            StopCondition::DurationMs(ms) => self.sim.now_us() >= ms.saturating_mul(1000),
        }
    }

    /// Advances simulated time up to `until_us`, stopping early at the stop
    /// condition. Returns true once the stop condition has been reached.
    pub fn advance(&mut self, until_us: u64) -> bool {
        if self.finished {
            return true;
        }
        let until = match self.config.stop {
            StopCondition::DurationMs(ms) => until_us.min(ms.saturating_mul(1000)),
            StopCondition::Height(_) => until_us,
        };
        loop {
            if self.stop_reached() {
                return true;
            }
            match self.sim.next_event_time() {
                Some(at) if at <= until => {
                    self.sim.step();
                }
                _ => {
                    self.sim.run_until_time(until);
                    return self.stop_reached();
                }
            }
        }
    }

    /// Stops mining, waits for quiescence and settles ties.
    pub fn finish(&mut self) {
        if !self.finished {
            self.settle_rounds = self.sim.stop_and_settle(MAX_SETTLE_ROUNDS);
            self.finished = true;
        }
    }

    /// Runs to the stop condition and finishes.
    pub fn run_to_completion(mut self) -> Vec<EventLog> {
        self.advance(u64::MAX);
        self.finish();
        self.into_logs()
    }

    pub fn into_logs(self) -> Vec<EventLog> {
        self.sim.into_logs()
    }
}
