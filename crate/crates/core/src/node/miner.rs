use rand::RngCore;

use crate::chain::{pow_target, Block, ChainStore, Hash32, Target};

/// Candidate block extending a fixed parent, with its hash preimage kept in
/// a buffer so each attempt only patches the nonce and timestamp.
#[derive(Clone, Debug)]
struct Candidate {
    parent: Hash32,
    number: u64,
    miner_id: String,
    difficulty: u64,
    target: Target,
    preimage: Vec<u8>,
    nonce_at: usize,
}

impl Candidate {
    fn new(parent: &Block, miner_id: &str, difficulty: u64) -> Option<Self> {
        let target = pow_target(difficulty).ok()?;
        let template = Block::seal(parent.number + 1, parent.hash, miner_id, 0, difficulty, 0);
        let preimage = crate::chain::canonical_serialize(&template);
        Some(Candidate {
            parent: parent.hash,
            number: parent.number + 1,
            miner_id: miner_id.to_string(),
            difficulty,
            target,
            nonce_at: 8 + 32 + 4 + miner_id.len(),
            preimage,
        })
    }

    fn attempt(&mut self, nonce: u64, timestamp_ms: u64) -> Option<Block> {
        let n = self.nonce_at;
        self.preimage[n..n + 8].copy_from_slice(&nonce.to_be_bytes());
        self.preimage[n + 16..n + 24].copy_from_slice(&timestamp_ms.to_be_bytes());
        let hash = Hash32::digest(&self.preimage);
        self.target.admits(&hash).then(|| Block {
            number: self.number,
            parent_hash: self.parent,
            miner_id: self.miner_id.clone(),
            nonce,
            difficulty: self.difficulty,
            timestamp_ms,
            hash,
        })
    }
}

/// Nonce search on top of the store's head. The candidate is rebuilt
/// whenever the head moves.
#[derive(Clone, Debug, Default)]
pub struct Miner {
    candidate: Option<Candidate>,
    attempts: u64,
}

impl Miner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Total nonce attempts made so far.
    pub fn attempts(&self) -> u64 {
        self.attempts
    }

    /// One attempt with a random nonce. Returns a block iff it meets the
    /// difficulty target.
    pub fn attempt(
        &mut self,
        store: &ChainStore,
        miner_id: &str,
        difficulty: u64,
        rng: &mut impl RngCore,
        timestamp_ms: u64,
    ) -> Option<Block> {
        let head = store.head()?;
        let stale = self
            .candidate
            .as_ref()
            .is_none_or(|c| c.parent != head.hash || c.difficulty != difficulty || c.miner_id != miner_id);
        if stale {
            self.candidate = Some(Candidate::new(head, miner_id, difficulty)?);
        }
        self.attempts += 1;
        let candidate = self.candidate.as_mut().expect("candidate built");
        candidate.attempt(rng.next_u64(), timestamp_ms)
    }
}

/// A single nonce attempt on a fresh candidate extending the store's head.
pub fn mine_step(
    store: &ChainStore,
    miner_id: &str,
    difficulty: u64,
    rng: &mut impl RngCore,
    timestamp_ms: u64,
) -> Option<Block> {
    Miner::new().attempt(store, miner_id, difficulty, rng, timestamp_ms)
}
