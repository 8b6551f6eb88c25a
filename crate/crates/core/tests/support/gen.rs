//! Proptest generators for wire messages.

use chainbox_core::chain::{Block, Hash32};
use chainbox_core::node::{BlockSummary, NodeStatus};
use chainbox_core::wire::{Command, Message, NodeReport, Status, MAX_GET_BLOCKS};
use proptest::collection::vec;
use proptest::prelude::*;

pub fn hash() -> impl Strategy<Value = Hash32> {
    prop_oneof![Just(Hash32::ZERO), any::<[u8; 32]>().prop_map(Hash32)]
}

pub fn text() -> impl Strategy<Value = String> {
    prop_oneof![Just(String::new()), "[a-z0-9]{1,12}", "\\PC{0,16}"]
}

/// Arbitrary field values; the hash is recomputed so the block is sealed.
pub fn block() -> impl Strategy<Value = Block> {
    (any::<u64>(), hash(), text(), any::<u64>(), 1..=u64::MAX, any::<u64>())
        .prop_map(|(number, parent, miner, nonce, d, ts)| Block::seal(number, parent, miner, nonce, d, ts))
}

/// A parent-linked ascending run of blocks.
pub fn linked_blocks() -> impl Strategy<Value = Vec<Block>> {
    (0..1000u64, hash(), vec((text(), any::<u64>(), 1..=u64::MAX), 0..20)).prop_map(|(start, parent, specs)| {
        let mut parent = parent;
        let mut out = Vec::new();
        for (i, (miner, nonce, d)) in specs.into_iter().enumerate() {
            let b = Block::seal(start + i as u64, parent, miner, nonce, d, i as u64);
            parent = b.hash;
            out.push(b);
        }
        out
    })
}

pub fn status() -> impl Strategy<Value = Status> {
    (any::<u64>(), hash(), hash(), any::<u64>(), any::<u128>()).prop_map(
        |(chain_id, genesis_hash, head_hash, head_number, total_difficulty)| Status {
            chain_id,
            genesis_hash,
            head_hash,
            head_number,
            total_difficulty,
        },
    )
}

pub fn node_status() -> impl Strategy<Value = NodeStatus> {
    (
        text(),
        hash(),
        any::<u64>(),
        any::<u128>(),
        vec((any::<u64>(), hash()), 0..3),
        any::<bool>(),
        any::<bool>(),
        vec(text(), 0..4),
    )
        .prop_map(|(node_id, head_hash, head_number, td, last, syncing, mining, peers)| NodeStatus {
            node_id,
            head_hash,
            head_number,
            total_difficulty: td,
            last_two: last.into_iter().map(|(n, h)| BlockSummary::new(n, h)).collect(),
            syncing,
            mining,
            peers,
        })
}

pub fn command() -> impl Strategy<Value = Command> {
    prop_oneof![
        (text(), text()).prop_map(|(peer_id, addr)| Command::Connect { peer_id, addr }),
        Just(Command::StartMining),
        Just(Command::StopMining),
        Just(Command::ReportStatus),
        Just(Command::Shutdown),
    ]
}

pub fn report() -> impl Strategy<Value = NodeReport> {
    prop_oneof![
        text().prop_map(|addr| NodeReport::Listening { addr }),
        node_status().prop_map(NodeReport::Status),
        text().prop_map(|reason| NodeReport::Fatal { reason }),
    ]
}

pub fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        status().prop_map(Message::Status),
        block().prop_map(Message::NewBlock),
        (any::<u64>(), 1..=MAX_GET_BLOCKS).prop_map(|(from_number, count)| Message::GetBlocks { from_number, count }),
        linked_blocks().prop_map(Message::Blocks),
        Just(Message::Ping),
        Just(Message::Pong),
        text().prop_map(|node_id| Message::Hello { node_id }),
        command().prop_map(Message::Command),
        report().prop_map(Message::Report),
    ]
}
