//! Live status snapshots pushed to the control panel.

use chainbox_core::node::{EventKind, NodeEvent, NodeStatus};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    /// Accepted but not started.
    Created,
    Running,
    Completed,
    Aborted,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::Completed | RunStatus::Aborted)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Created => "created",
            RunStatus::Running => "running",
            RunStatus::Completed => "completed",
            RunStatus::Aborted => "aborted",
        }
    }
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One node as the panel draws it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    #[serde(flatten)]
    pub status: NodeStatus,
    /// Deepest reorganization since the previous snapshot, 0 if the head only
    /// moved forward. Nonzero whenever the height went down.
    pub reorg_depth: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusSnapshot {
    pub run_id: String,
    /// Increases by one per published snapshot.
    pub seq: u64,
    /// Run clock (simulated or wall) in milliseconds since start.
    pub elapsed_ms: u64,
    pub status: RunStatus,
    /// All nodes report the same head.
    pub in_consensus: bool,
    pub nodes: Vec<Tile>,
}

impl StatusSnapshot {
    pub fn new(run_id: &str, seq: u64, elapsed_ms: u64, status: RunStatus, nodes: Vec<Tile>) -> Self {
        let in_consensus = nodes.windows(2).all(|w| w[0].status.head_hash == w[1].status.head_hash);
        StatusSnapshot { run_id: run_id.to_string(), seq, elapsed_ms, status, in_consensus, nodes }
    }

    pub fn max_height(&self) -> u64 {
        self.nodes.iter().map(|t| t.status.head_number).max().unwrap_or(0)
    }
}

/// Tracks how far into each node's event stream the last snapshot looked.
#[derive(Clone, Debug, Default)]
pub struct ReorgWatch {
    seen: Vec<usize>,
}

impl ReorgWatch {
    pub fn new(nodes: usize) -> Self {
        ReorgWatch { seen: vec![0; nodes] }
    }

    /// Deepest reorg among `events` past what was already observed for
    /// `node`. `events` is the node's full log so far.
    pub fn observe(&mut self, node: usize, events: &[NodeEvent]) -> u64 {
        let from = self.seen[node].min(events.len());
        self.seen[node] = events.len();
        deepest_reorg(&events[from..])
    }
}

pub fn deepest_reorg(events: &[NodeEvent]) -> u64 {
    events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::HeadChanged { reorg_depth, .. } => Some(reorg_depth),
            _ => None,
        })
        .max()
        .unwrap_or(0)
}
