//! Orchestration for chainbox experiments: run lifecycle, the multi-process
//! node runtime, archives and the HTTP control API.
//!
//! The API speaks JSON; see `docs/api.md` at the repository root for the
//! request and response shapes.

pub mod api;
pub mod archive;
pub mod client;
pub mod multiproc;
pub mod noderun;
pub mod registry;
pub mod simrun;
pub mod snapshot;

pub use registry::{RunError, RunOptions, RunRecord, RunRegistry, RunSummary};
pub use snapshot::{RunStatus, StatusSnapshot, Tile};

/// Environment variable naming the API listen port.
pub const PORT_ENV: &str = "CHAINBOX_PORT";
pub const DEFAULT_PORT: u16 = 7070;

/// Milliseconds of run time between status snapshots.
pub const SNAPSHOT_INTERVAL_MS: u64 = 250;
