//! The per-node state machine.
//!
//! [`Node`] performs no I/O. Drivers feed it peer messages, commands and
//! mining budgets, and deliver the [`Outbound`] messages it returns; the
//! simulator and the multi-process runtime share this logic unchanged.

mod event;
mod miner;
mod status;

pub use event::{EventKind, NodeEvent, SyncFailure};
pub use miner::{mine_step, Miner};
pub use status::{BlockSummary, NodeStatus};

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chain::{pow_valid, Block, ChainError, ChainStore, GenesisConfig, Hash32, Insertion};
use crate::wire::{check_compatible, Command, Message, Status, MAX_GET_BLOCKS};

/// Blocks requested per `GetBlocks` during sync.
pub const SYNC_BATCH: u32 = 128;

#[derive(Debug, Error)]
pub enum NodeError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("incompatible peer {peer}: {reason}")]
    IncompatiblePeer { peer: String, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outbound {
    pub to: String,
    pub message: Message,
}

#[derive(Clone, Debug)]
pub struct NodeParams {
    pub node_id: String,
    pub genesis: GenesisConfig,
    /// Seeds the nonce generator.
    pub seed: u64,
    pub sync_batch: u32,
}

impl NodeParams {
    pub fn new(node_id: impl Into<String>, genesis: GenesisConfig, seed: u64) -> Self {
        NodeParams { node_id: node_id.into(), genesis, seed, sync_batch: SYNC_BATCH }
    }
}

#[derive(Clone, Debug)]
struct PeerView {
    head_number: u64,
    total_difficulty: u128,
}

#[derive(Clone, Debug)]
struct SyncSession {
    peer: String,
    next_from: u64,
    /// Last block of the previous batch that linked into our store; the next
    /// batch must build on it.
    linked_tip: Option<Hash32>,
}

pub struct Node {
    id: String,
    chain_id: u64,
    difficulty: u64,
    store: ChainStore,
    peers: BTreeMap<String, PeerView>,
    mining: bool,
    shut_down: bool,
    initial_sync_started: bool,
    sync: Option<SyncSession>,
    sync_batch: u32,
    miner: Miner,
    rng: ChaCha8Rng,
    events: Vec<NodeEvent>,
}

impl Node {
    pub fn new(params: NodeParams) -> Result<Self, NodeError> {
        if params.genesis.difficulty == 0 {
            return Err(ChainError::InvalidParameter("difficulty must be positive").into());
        }
        let store = ChainStore::with_genesis(params.genesis.genesis_block())?;
        Ok(Node {
            id: params.node_id,
            chain_id: params.genesis.chain_id,
            difficulty: params.genesis.difficulty,
            store,
            peers: BTreeMap::new(),
            mining: false,
            shut_down: false,
            initial_sync_started: false,
            sync: None,
            sync_batch: params.sync_batch.clamp(1, MAX_GET_BLOCKS),
            miner: Miner::new(),
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            events: Vec::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn store(&self) -> &ChainStore {
        &self.store
    }

    pub fn genesis(&self) -> &Block {
        self.store.canonical_at(0).expect("genesis stored")
    }

    pub fn events(&self) -> &[NodeEvent] {
        &self.events
    }

    /// Removes and returns events logged since the last drain.
    pub fn drain_events(&mut self) -> Vec<NodeEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn is_mining(&self) -> bool {
        self.mining
    }

    pub fn is_syncing(&self) -> bool {
        self.sync.is_some()
    }

    pub fn is_shut_down(&self) -> bool {
        self.shut_down
    }

    /// Mining is suspended while a sync session is active.
    pub fn can_mine(&self) -> bool {
        self.mining && !self.shut_down && self.sync.is_none()
    }

    pub fn hash_attempts(&self) -> u64 {
        self.miner.attempts()
    }

    pub fn peer_ids(&self) -> impl Iterator<Item = &str> {
        self.peers.keys().map(String::as_str)
    }

    pub fn status_message(&self) -> Status {
        Status {
            chain_id: self.chain_id,
            genesis_hash: self.store.genesis_hash().expect("genesis stored"),
            head_hash: self.store.head_hash().expect("genesis stored"),
            head_number: self.store.head_number(),
            total_difficulty: self.store.head_total_difficulty(),
        }
    }

    pub fn status(&self) -> NodeStatus {
        let head = self.store.head().expect("genesis stored");
        let mut last_two = vec![BlockSummary::new(head.number, head.hash)];
        if let Some(parent) = self.store.get(&head.parent_hash) {
            last_two.push(BlockSummary::new(parent.number, parent.hash));
        }
        NodeStatus {
            node_id: self.id.clone(),
            head_hash: head.hash,
            head_number: head.number,
            total_difficulty: self.store.head_total_difficulty(),
            last_two,
            syncing: self.is_syncing(),
            mining: self.mining,
            peers: self.peers.keys().cloned().collect(),
        }
    }

    pub fn command(&mut self, command: &Command) {
        match command {
            Command::StartMining if !self.shut_down => self.mining = true,
            Command::StopMining => self.mining = false,
            Command::Shutdown => {
                self.mining = false;
                self.shut_down = true;
            }
            // Connect is handled by the transport driver; status is read via
            // `status()`.
            _ => {}
        }
    }

    /// Handshake completed with `peer`.
    pub fn peer_connected(&mut self, peer: &str, remote: &Status, now_us: u64) -> Result<Vec<Outbound>, NodeError> {
        check_compatible(&self.status_message(), remote)
            .map_err(|e| NodeError::IncompatiblePeer { peer: peer.to_string(), reason: e.to_string() })?;
        self.peers.insert(
            peer.to_string(),
            PeerView { head_number: remote.head_number, total_difficulty: remote.total_difficulty },
        );
        let mut out = Vec::new();
        if self.shut_down || self.sync.is_some() {
            return Ok(out);
        }
        if !self.initial_sync_started || remote.total_difficulty > self.store.head_total_difficulty() {
            self.initial_sync_started = true;
            self.start_sync(peer, now_us, &mut out);
        }
        Ok(out)
    }

    pub fn peer_disconnected(&mut self, peer: &str, now_us: u64) -> Vec<Outbound> {
        self.peers.remove(peer);
        let mut out = Vec::new();
        if self.sync.as_ref().is_some_and(|s| s.peer == peer) {
            self.sync = None;
            self.log(now_us, EventKind::SyncFailed { peer: peer.to_string(), reason: SyncFailure::Disconnect });
            self.sync_next_after(peer, now_us, &mut out);
        }
        out
    }

    pub fn handle_message(&mut self, from: &str, message: Message, now_us: u64) -> Vec<Outbound> {
        let mut out = Vec::new();
        if self.shut_down {
            return out;
        }
        match message {
            Message::Status(status) => {
                if self.peers.contains_key(from) {
                    self.observe_peer(from, status.head_number, status.total_difficulty);
                } else {
                    match self.peer_connected(from, &status, now_us) {
                        Ok(o) => out = o,
                        Err(e) => log::warn!("{}: {e}", self.id),
                    }
                }
            }
            Message::NewBlock(block) => self.accept_block(block, Some(from), true, now_us, &mut out),
            Message::GetBlocks { from_number, count } => {
                let count = count.clamp(1, MAX_GET_BLOCKS) as usize;
                let blocks = self.store.canonical_range(from_number, count);
                out.push(Outbound { to: from.to_string(), message: Message::Blocks(blocks) });
            }
            Message::Blocks(blocks) => self.on_blocks(from, blocks, now_us, &mut out),
            Message::Ping => out.push(Outbound { to: from.to_string(), message: Message::Pong }),
            Message::Pong | Message::Hello { .. } => {}
            Message::Command(_) | Message::Report(_) => {
                log::debug!("{}: ignoring control frame from peer {from}", self.id);
            }
        }
        out
    }

    /// Up to `attempts` nonce attempts, spread evenly over `span_us`
    /// starting at `start_us`. Returns the first valid block and the time it
    /// was found, without committing it.
    pub fn mine(&mut self, attempts: u64, start_us: u64, span_us: u64) -> Option<(Block, u64)> {
        if !self.can_mine() {
            return None;
        }
        for i in 0..attempts {
            let offset =
                if attempts == 0 { 0 } else { (u128::from(span_us) * u128::from(i) / u128::from(attempts)) as u64 };
            let at_us = start_us + offset;
            if let Some(block) = self.miner.attempt(&self.store, &self.id, self.difficulty, &mut self.rng, at_us / 1000)
            {
                return Some((block, at_us));
            }
        }
        None
    }

    /// Records and broadcasts a block found by [`Node::mine`]. Stale blocks
    /// (head moved since) are discarded.
    pub fn commit_mined(&mut self, block: Block, now_us: u64) -> Vec<Outbound> {
        let mut out = Vec::new();
        if !self.can_mine() || self.store.head_hash() != Some(block.parent_hash) {
            return out;
        }
        self.log(now_us, EventKind::Mined { block: block.clone() });
        self.accept_block(block, None, false, now_us, &mut out);
        out
    }

    /// Inserts a self-mined (`from == None`) or received block and gossips
    /// it to every peer except the sender if it was newly accepted.
    pub fn on_new_block(&mut self, block: Block, from: Option<&str>, now_us: u64) -> Vec<Outbound> {
        let mut out = Vec::new();
        self.accept_block(block, from, true, now_us, &mut out);
        out
    }

    /// With `fetch_missing`, a block from a peer whose parent we lack starts
    /// a sync with that peer (unless one is already running).
    fn accept_block(
        &mut self,
        block: Block,
        from: Option<&str>,
        fetch_missing: bool,
        now_us: u64,
        out: &mut Vec<Outbound>,
    ) {
        if !block.hash_matches() || !pow_valid(&block).unwrap_or(false) {
            log::warn!("{}: dropping invalid block {} from {:?}", self.id, block.hash, from);
            return;
        }
        let insertion = match self.store.insert(block.clone()) {
            Ok(ins) => ins,
            Err(e) => {
                log::warn!("{}: rejected block from {:?}: {e}", self.id, from);
                return;
            }
        };
        let Insertion { outcome, head_change, adopted } = insertion;
        if outcome == crate::chain::InsertOutcome::Duplicate {
            return;
        }
        if let Some(peer) = from {
            self.log(now_us, EventKind::Received { block: block.clone(), from_peer: peer.to_string() });
            if outcome == crate::chain::InsertOutcome::OrphanedPending {
                // Difficulty is static, so the block's height fixes the weight
                // of the chain it sits on.
                let claimed =
                    u128::from(self.genesis().difficulty) + u128::from(block.number) * u128::from(block.difficulty);
                self.observe_peer(peer, block.number, claimed);
                if fetch_missing && self.sync.is_none() && claimed > self.store.head_total_difficulty() {
                    self.start_sync(peer, now_us, out);
                }
            }
        }
        if let Some(change) = head_change {
            self.log(
                now_us,
                EventKind::HeadChanged {
                    old_hash: change.old_head,
                    new_hash: change.new_head,
                    new_height: change.new_height,
                    reorg_depth: change.reorg_depth,
                },
            );
        }
        if outcome.is_accepted() {
            self.gossip(&block, from, out);
            for hash in adopted {
                if let Some(b) = self.store.get(&hash).cloned() {
                    self.gossip(&b, None, out);
                }
            }
            if let Some(peer) = from {
                if let Some(td) = self.store.total_difficulty(&block.hash) {
                    self.observe_peer(peer, block.number, td);
                }
            }
        }
    }

    fn gossip(&self, block: &Block, except: Option<&str>, out: &mut Vec<Outbound>) {
        for peer in self.peers.keys() {
            if Some(peer.as_str()) != except {
                out.push(Outbound { to: peer.clone(), message: Message::NewBlock(block.clone()) });
            }
        }
    }

    fn observe_peer(&mut self, peer: &str, head_number: u64, total_difficulty: u128) {
        if let Some(view) = self.peers.get_mut(peer) {
            view.head_number = view.head_number.max(head_number);
            view.total_difficulty = view.total_difficulty.max(total_difficulty);
        }
    }

    fn start_sync(&mut self, peer: &str, now_us: u64, out: &mut Vec<Outbound>) {
        self.log(now_us, EventKind::SyncStarted { peer: peer.to_string() });
        let peer_td = self.peers.get(peer).map_or(0, |v| v.total_difficulty);
        if peer_td <= self.store.head_total_difficulty() {
            self.log(now_us, EventKind::SyncCompleted { height: self.store.head_number() });
            return;
        }
        let session = SyncSession { peer: peer.to_string(), next_from: self.store.head_number() + 1, linked_tip: None };
        self.request_batch(&session, out);
        self.sync = Some(session);
    }

    fn request_batch(&self, session: &SyncSession, out: &mut Vec<Outbound>) {
        out.push(Outbound {
            to: session.peer.clone(),
            message: Message::GetBlocks { from_number: session.next_from, count: self.sync_batch },
        });
    }

    fn step_back(&self, from: u64) -> u64 {
        from.saturating_sub(u64::from(self.sync_batch)).max(1)
    }

    fn on_blocks(&mut self, from: &str, blocks: Vec<Block>, now_us: u64, out: &mut Vec<Outbound>) {
        let Some(mut session) = self.sync.take().filter(|s| s.peer == from) else {
            for block in blocks {
                self.accept_block(block, Some(from), true, now_us, out);
            }
            return;
        };

        let Some(first) = blocks.first() else {
            if session.linked_tip.is_some() {
                // The peer no longer has blocks where its chain used to continue.
                self.restart_sync(session, from, session_step_back_from(self, None), now_us, out);
            } else if session.next_from <= 1 {
                self.finish_sync(from, now_us, out);
            } else {
                session.next_from = self.step_back(session.next_from);
                self.request_batch(&session, out);
                self.sync = Some(session);
            }
            return;
        };

        let linked = match session.linked_tip {
            Some(tip) => first.parent_hash == tip,
            None => self.store.contains(&first.parent_hash),
        };
        let first_number = first.number;
        let last = blocks.last().map(|b| (b.hash, b.number)).expect("non-empty");
        let full_batch = blocks.len() as u32 >= self.sync_batch;
        for block in blocks {
            self.accept_block(block, Some(from), false, now_us, out);
        }

        if !linked {
            if session.linked_tip.is_some() {
                let restart_from = session_step_back_from(self, Some(first_number));
                self.restart_sync(session, from, restart_from, now_us, out);
            } else {
                // Our chain diverges from the peer's below `next_from`; search
                // further back for a common ancestor.
                session.next_from = self.step_back(first_number);
                self.request_batch(&session, out);
                self.sync = Some(session);
            }
            return;
        }

        session.linked_tip = Some(last.0);
        if full_batch {
            session.next_from = last.1 + 1;
            self.request_batch(&session, out);
            self.sync = Some(session);
        } else {
            self.finish_sync(from, now_us, out);
        }
    }

    /// Aborts the session after the peer reorganized and starts a new one
    /// from further back, so the new chain is fetched from its fork point.
    fn restart_sync(
        &mut self,
        mut session: SyncSession,
        peer: &str,
        next_from: u64,
        now_us: u64,
        out: &mut Vec<Outbound>,
    ) {
        self.log(now_us, EventKind::SyncFailed { peer: peer.to_string(), reason: SyncFailure::PeerReorged });
        self.log(now_us, EventKind::SyncStarted { peer: peer.to_string() });
        session.linked_tip = None;
        session.next_from = next_from;
        self.request_batch(&session, out);
        self.sync = Some(session);
    }

    fn finish_sync(&mut self, peer: &str, now_us: u64, out: &mut Vec<Outbound>) {
        self.sync = None;
        self.log(now_us, EventKind::SyncCompleted { height: self.store.head_number() });
        self.sync_next_after(peer, now_us, out);
    }

    /// Starts a session with the next peer (round-robin after `previous`)
    /// that claims more total difficulty than we have.
    fn sync_next_after(&mut self, previous: &str, now_us: u64, out: &mut Vec<Outbound>) {
        let local_td = self.store.head_total_difficulty();
        let after = self.peers.range::<str, _>((std::ops::Bound::Excluded(previous), std::ops::Bound::Unbounded));
        let before = self.peers.range::<str, _>((std::ops::Bound::Unbounded, std::ops::Bound::Included(previous)));
        let next = after.chain(before).find(|(_, view)| view.total_difficulty > local_td).map(|(id, _)| id.clone());
        if let Some(peer) = next {
            self.start_sync(&peer, now_us, out);
        }
    }

    fn log(&mut self, at_us: u64, kind: EventKind) {
        self.events.push(NodeEvent { at_us, node_id: self.id.clone(), kind });
    }

    /// Draws a value from the node's seeded generator.
    pub fn next_random(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// Restart point after a mid-sync reorg: one batch below the first
/// non-linking block, or below our head when the peer returned nothing.
fn session_step_back_from(node: &Node, first_number: Option<u64>) -> u64 {
    let from = first_number.unwrap_or_else(|| node.store.head_number() + 1);
    node.step_back(from)
}
