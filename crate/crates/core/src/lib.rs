//! Minimal proof-of-work blockchain for consensus experiments.
//!
//! - [`chain`]: blocks, proof-of-work and the fork-choice store.
//! - [`wire`]: the framed protocol, TCP peers and the simulated transport.
//! - [`node`]: the per-node state machine (gossip, sync, mining).
//! - [`sim`]: a deterministic discrete-event network of nodes.
//! - [`topology`]: ring, star, grid and custom peer graphs.
//! - [`experiment`]: run configuration, difficulty calibration, simulated runs.
//! - [`eventlog`] and [`metrics`]: per-node logs and the consensus-quality
//!   metrics computed from them.
//!
//! Ratios are generic over [`Scalar`]; the aliases below pick the usual
//! instantiations.

pub mod chain;
pub mod eventlog;
pub mod experiment;
pub mod metrics;
pub mod node;
pub mod scalar;
pub mod sim;
pub mod topology;
pub mod wire;

use num_rational::Ratio;

pub use chain::{Block, ChainStore, GenesisConfig, Hash32};
pub use eventlog::EventLog;
pub use experiment::{ExperimentConfig, RunMode, StopCondition};
pub use metrics::{ExactMetrics, FloatMetrics, MetricsReport};
pub use node::{Node, NodeEvent};
pub use scalar::Scalar;
pub use topology::TopologySpec;

/// Exact rational used for metrics and path lengths.
pub type Rational = Ratio<u64>;

/// Metrics in single precision, for compact plotting output.
pub type MetricsReportF32 = MetricsReport<f32>;
