use crate::chain::{Block, Hash32};
use crate::node::NodeStatus;

use super::WireError;

/// Largest `GetBlocks.count` a peer may ask for.
pub const MAX_GET_BLOCKS: u32 = 512;

/// Handshake summary of a node's chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Status {
    pub chain_id: u64,
    pub genesis_hash: Hash32,
    pub head_hash: Hash32,
    pub head_number: u64,
    pub total_difficulty: u128,
}

/// Orchestrator-to-node control commands.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Command {
    /// Dial a peer. Sent once per adjacency after all nodes report their
    /// listen addresses.
    Connect {
        peer_id: String,
        addr: String,
    },
    StartMining,
    StopMining,
    ReportStatus,
    Shutdown,
}

/// Node-to-orchestrator reports.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeReport {
    Listening { addr: String },
    Status(NodeStatus),
    Fatal { reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Status(Status),
    NewBlock(Block),
    GetBlocks {
        from_number: u64,
        count: u32,
    },
    /// Ascending by height; parent-linked wherever heights are contiguous.
    Blocks(Vec<Block>),
    Ping,
    Pong,
    /// First frame on a peer connection, naming the sender.
    Hello {
        node_id: String,
    },
    Command(Command),
    Report(NodeReport),
}

impl Message {
    pub fn validate(&self) -> Result<(), WireError> {
        match self {
            Message::GetBlocks { count, .. } if !(1..=MAX_GET_BLOCKS).contains(count) => {
                Err(WireError::Malformed(format!("GetBlocks count {count} outside [1, {MAX_GET_BLOCKS}]")))
            }
            Message::Blocks(blocks) => {
                for pair in blocks.windows(2) {
                    if pair[1].number <= pair[0].number {
                        return Err(WireError::Malformed("Blocks not ascending by height".into()));
                    }
                    if pair[1].number == pair[0].number + 1 && pair[1].parent_hash != pair[0].hash {
                        return Err(WireError::Malformed("contiguous Blocks not parent-linked".into()));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Handshake rule: peers must agree on chain id and genesis.
pub fn check_compatible(local: &Status, remote: &Status) -> Result<(), WireError> {
    if local.chain_id != remote.chain_id {
        return Err(WireError::IncompatiblePeer(format!("chain id {} != {}", remote.chain_id, local.chain_id)));
    }
    if local.genesis_hash != remote.genesis_hash {
        return Err(WireError::IncompatiblePeer(format!(
            "genesis {} != {}",
            remote.genesis_hash.short(),
            local.genesis_hash.short()
        )));
    }
    Ok(())
}
