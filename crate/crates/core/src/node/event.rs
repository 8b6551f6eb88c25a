use serde::{Deserialize, Serialize};

use crate::chain::{Block, Hash32};

/// One record of a node's append-only event log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeEvent {
    /// Microseconds since the run started (simulated or wall clock).
    pub at_us: u64,
    pub node_id: String,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Mined {
        block: Block,
    },
    /// First arrival of a block from a peer; later copies are not logged.
    Received {
        block: Block,
        from_peer: String,
    },
    HeadChanged {
        old_hash: Hash32,
        new_hash: Hash32,
        new_height: u64,
        reorg_depth: u64,
    },
    SyncStarted {
        peer: String,
    },
    SyncCompleted {
        height: u64,
    },
    SyncFailed {
        peer: String,
        reason: SyncFailure,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyncFailure {
    /// The sync peer switched to a chain that does not extend the blocks
    /// already downloaded from it.
    PeerReorged,
    Disconnect,
}

impl EventKind {
    pub fn block(&self) -> Option<&Block> {
        match self {
            EventKind::Mined { block } | EventKind::Received { block, .. } => Some(block),
            _ => None,
        }
    }

    pub fn is_sync(&self) -> bool {
        matches!(self, EventKind::SyncStarted { .. } | EventKind::SyncCompleted { .. } | EventKind::SyncFailed { .. })
    }
}
