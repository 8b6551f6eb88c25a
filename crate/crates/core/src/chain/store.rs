use std::collections::{HashMap, VecDeque};

use super::{pow_valid, Block, ChainError, Hash32};

/// Parked blocks with unknown parents; the oldest is evicted beyond this.
pub const ORPHAN_POOL_CAP: usize = 1024;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    ExtendsHead,
    SideChain,
    Reorg { old_head: Hash32, new_head: Hash32 },
    Duplicate,
    OrphanedPending,
}

impl InsertOutcome {
    /// True for outcomes where the block (and possibly parked descendants)
    /// joined the connected tree.
    pub fn is_accepted(&self) -> bool {
        matches!(self, Self::ExtendsHead | Self::SideChain | Self::Reorg { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadChange {
    /// [`Hash32::ZERO`] when the store was empty.
    pub old_head: Hash32,
    pub new_head: Hash32,
    pub new_height: u64,
    /// Blocks of the old canonical chain that are no longer canonical.
    pub reorg_depth: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Insertion {
    pub outcome: InsertOutcome,
    pub head_change: Option<HeadChange>,
    /// Parked descendants connected as a consequence of this insertion, in
    /// connection order.
    pub adopted: Vec<Hash32>,
}

impl Insertion {
    fn bare(outcome: InsertOutcome) -> Self {
        Insertion { outcome, head_change: None, adopted: Vec::new() }
    }
}

#[derive(Clone, Debug)]
struct Entry {
    block: Block,
    total_difficulty: u128,
}

/// A node's view of the block tree.
///
/// Every stored non-genesis block has its parent stored. The head is the block
/// with the greatest total difficulty; among equals the one connected first
/// keeps the head.
#[derive(Clone, Debug, Default)]
pub struct ChainStore {
    blocks: HashMap<Hash32, Entry>,
    children: HashMap<Hash32, Vec<Hash32>>,
    genesis: Option<Hash32>,
    head: Option<Hash32>,
    /// Canonical chain indexed by height.
    canonical: Vec<Hash32>,
    pending: HashMap<Hash32, Block>,
    pending_order: VecDeque<Hash32>,
    pending_by_parent: HashMap<Hash32, Vec<Hash32>>,
}

impl ChainStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_genesis(genesis: Block) -> Result<Self, ChainError> {
        let mut store = Self::new();
        store.insert(genesis)?;
        Ok(store)
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Number of connected blocks, genesis included.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn genesis_hash(&self) -> Option<Hash32> {
        self.genesis
    }

    pub fn head_hash(&self) -> Option<Hash32> {
        self.head
    }

    pub fn head(&self) -> Option<&Block> {
        self.head.and_then(|h| self.get(&h))
    }

    pub fn head_number(&self) -> u64 {
        self.head().map_or(0, |b| b.number)
    }

    pub fn head_total_difficulty(&self) -> u128 {
        self.head.and_then(|h| self.total_difficulty(&h)).unwrap_or(0)
    }

    pub fn get(&self, hash: &Hash32) -> Option<&Block> {
        self.blocks.get(hash).map(|e| &e.block)
    }

    /// Connected to genesis.
    pub fn contains(&self, hash: &Hash32) -> bool {
        self.blocks.contains_key(hash)
    }

    /// Connected or parked.
    pub fn is_known(&self, hash: &Hash32) -> bool {
        self.contains(hash) || self.pending.contains_key(hash)
    }

    pub fn total_difficulty(&self, hash: &Hash32) -> Option<u128> {
        self.blocks.get(hash).map(|e| e.total_difficulty)
    }

    pub fn children(&self, hash: &Hash32) -> &[Hash32] {
        self.children.get(hash).map_or(&[], Vec::as_slice)
    }

    pub fn canonical_at(&self, number: u64) -> Option<&Block> {
        let idx = usize::try_from(number).ok()?;
        self.canonical.get(idx).and_then(|h| self.get(h))
    }

    /// Up to `count` canonical blocks starting at height `from`.
    pub fn canonical_range(&self, from: u64, count: usize) -> Vec<Block> {
        let Ok(start) = usize::try_from(from) else {
            return Vec::new();
        };
        self.canonical.iter().skip(start).take(count).filter_map(|h| self.get(h).cloned()).collect()
    }

    pub fn is_canonical(&self, hash: &Hash32) -> bool {
        self.get(hash).and_then(|b| self.canonical.get(b.number as usize)).is_some_and(|h| h == hash)
    }

    /// Path from genesis to head, ascending by height.
    pub fn mainchain(&self) -> Vec<Block> {
        self.canonical.iter().filter_map(|h| self.get(h).cloned()).collect()
    }

    /// Whether `ancestor` lies on the path from genesis to `descendant`
    /// (inclusive).
    pub fn is_ancestor(&self, ancestor: &Hash32, descendant: &Hash32) -> bool {
        let Some(target) = self.get(ancestor) else {
            return false;
        };
        let mut cursor = self.get(descendant);
        while let Some(b) = cursor {
            if b.number < target.number {
                return false;
            }
            if b.hash == *ancestor {
                return true;
            }
            cursor = self.get(&b.parent_hash);
        }
        false
    }

    /// Validates and stores `block`, re-running fork choice.
    ///
    /// Blocks whose parent is unknown are parked and connected automatically
    /// once the parent arrives. The genesis block is exempt from the
    /// proof-of-work check.
    pub fn insert(&mut self, block: Block) -> Result<Insertion, ChainError> {
        if !block.hash_matches() {
            return Err(ChainError::BadHash(block.hash));
        }
        if (block.number == 0) != block.parent_hash.is_zero() {
            return Err(ChainError::Malformed("height 0 iff parent hash is zero"));
        }
        if block.difficulty == 0 {
            return Err(ChainError::InvalidParameter("difficulty must be positive"));
        }
        if block.is_genesis() {
            return self.insert_genesis(block);
        }
        if !pow_valid(&block)? {
            return Err(ChainError::InvalidPow(block.hash));
        }
        if self.is_known(&block.hash) {
            return Ok(Insertion::bare(InsertOutcome::Duplicate));
        }
        let Some(parent_number) = self.get(&block.parent_hash).map(|p| p.number) else {
            self.park(block);
            return Ok(Insertion::bare(InsertOutcome::OrphanedPending));
        };
        if block.number != parent_number + 1 {
            return Err(ChainError::BadHeight { hash: block.hash, number: block.number, parent_number });
        }

        let old_head = self.head.expect("connected parent implies a head");
        let mut adopted = Vec::new();
        let mut queue = VecDeque::from([block]);
        let mut first = true;
        while let Some(next) = queue.pop_front() {
            let hash = next.hash;
            self.connect(next);
            if !first {
                adopted.push(hash);
            }
            first = false;
            for child in self.unpark_children(&hash) {
                let parent_number = self.get(&hash).map_or(0, |b| b.number);
                if child.number == parent_number + 1 {
                    queue.push_back(child);
                } else {
                    log::warn!("dropping parked block {} with inconsistent height", child.hash);
                }
            }
        }

        let new_head = self.head.expect("head set");
        if new_head == old_head {
            return Ok(Insertion { outcome: InsertOutcome::SideChain, head_change: None, adopted });
        }
        let reorg_depth = self.update_canonical(new_head);
        let outcome =
            if reorg_depth == 0 { InsertOutcome::ExtendsHead } else { InsertOutcome::Reorg { old_head, new_head } };
        let head_change = HeadChange { old_head, new_head, new_height: self.head_number(), reorg_depth };
        Ok(Insertion { outcome, head_change: Some(head_change), adopted })
    }

    fn insert_genesis(&mut self, block: Block) -> Result<Insertion, ChainError> {
        if let Some(expected) = self.genesis {
            return if expected == block.hash {
                Ok(Insertion::bare(InsertOutcome::Duplicate))
            } else {
                Err(ChainError::GenesisMismatch { expected, got: block.hash })
            };
        }
        let hash = block.hash;
        self.blocks.insert(hash, Entry { total_difficulty: u128::from(block.difficulty), block });
        self.genesis = Some(hash);
        self.head = Some(hash);
        self.canonical = vec![hash];
        let mut adopted = Vec::new();
        // Blocks parked before genesis was known.
        let mut queue: VecDeque<Block> = self.unpark_children(&hash).into();
        while let Some(next) = queue.pop_front() {
            if self.get(&next.parent_hash).map(|p| p.number + 1) != Some(next.number) {
                continue;
            }
            let h = next.hash;
            self.connect(next);
            adopted.push(h);
            queue.extend(self.unpark_children(&h));
        }
        let new_head = self.head.expect("head set");
        if new_head != hash {
            self.update_canonical(new_head);
        }
        Ok(Insertion {
            outcome: InsertOutcome::ExtendsHead,
            head_change: Some(HeadChange {
                old_head: Hash32::ZERO,
                new_head,
                new_height: self.head_number(),
                reorg_depth: 0,
            }),
            adopted,
        })
    }

    fn connect(&mut self, block: Block) {
        let parent_td = self.total_difficulty(&block.parent_hash).expect("parent connected");
        let total_difficulty = parent_td + u128::from(block.difficulty);
        let hash = block.hash;
        self.children.entry(block.parent_hash).or_default().push(hash);
        self.blocks.insert(hash, Entry { block, total_difficulty });
        // Strictly greater: ties keep the block that was connected first.
        if total_difficulty > self.head_total_difficulty() {
            self.head = Some(hash);
        }
    }

    /// Rewrites the canonical index for `new_head`; returns how many formerly
    /// canonical blocks were dropped.
    fn update_canonical(&mut self, new_head: Hash32) -> u64 {
        let mut path = Vec::new();
        let mut cursor = new_head;
        loop {
            let block = self.get(&cursor).expect("connected ancestry");
            let idx = block.number as usize;
            if self.canonical.get(idx) == Some(&cursor) {
                break;
            }
            path.push(cursor);
            if block.is_genesis() {
                break;
            }
            cursor = block.parent_hash;
        }
        let keep = self.get(&new_head).expect("head stored").number as usize + 1 - path.len();
        let dropped = self.canonical.len().saturating_sub(keep) as u64;
        self.canonical.truncate(keep);
        self.canonical.extend(path.into_iter().rev());
        dropped
    }

    fn park(&mut self, block: Block) {
        let hash = block.hash;
        self.pending_by_parent.entry(block.parent_hash).or_default().push(hash);
        self.pending.insert(hash, block);
        self.pending_order.push_back(hash);
        while self.pending.len() > ORPHAN_POOL_CAP {
            let Some(oldest) = self.pending_order.pop_front() else {
                break;
            };
            if let Some(evicted) = self.pending.remove(&oldest) {
                log::debug!("orphan pool full, evicting {}", evicted.hash);
                if let Some(siblings) = self.pending_by_parent.get_mut(&evicted.parent_hash) {
                    siblings.retain(|h| *h != oldest);
                    if siblings.is_empty() {
                        self.pending_by_parent.remove(&evicted.parent_hash);
                    }
                }
            }
        }
    }

    fn unpark_children(&mut self, parent: &Hash32) -> Vec<Block> {
        let Some(hashes) = self.pending_by_parent.remove(parent) else {
            return Vec::new();
        };
        let out: Vec<Block> = hashes.iter().filter_map(|h| self.pending.remove(h)).collect();
        self.pending_order.retain(|h| !hashes.contains(h));
        out
    }
}

/// Path from genesis to the store's head, ascending by height.
pub fn mainchain_of(store: &ChainStore) -> Vec<Block> {
    store.mainchain()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::GenesisConfig;

    fn genesis() -> Block {
        GenesisConfig::new(1, 1).genesis_block()
    }

    fn child(parent: &Block, miner: &str, difficulty: u64) -> Block {
        // difficulty <= 2 keeps brute-forcing a valid nonce cheap
        (0u64..)
            .map(|nonce| Block::seal(parent.number + 1, parent.hash, miner, nonce, difficulty, 0))
            .find(|b| pow_valid(b).unwrap())
            .unwrap()
    }

    #[test]
    fn genesis_into_empty_store_extends_head() {
        let mut store = ChainStore::new();
        let g = genesis();
        let ins = store.insert(g.clone()).unwrap();
        assert_eq!(ins.outcome, InsertOutcome::ExtendsHead);
        assert_eq!(store.head_hash(), Some(g.hash));
        assert_eq!(store.mainchain(), vec![g]);
    }

    #[test]
    fn foreign_genesis_is_rejected() {
        let mut store = ChainStore::with_genesis(genesis()).unwrap();
        let other = GenesisConfig::new(2, 1).genesis_block();
        assert!(matches!(store.insert(other), Err(ChainError::GenesisMismatch { .. })));
        assert_eq!(store.insert(genesis()).unwrap().outcome, InsertOutcome::Duplicate);
    }

    #[test]
    fn equal_difficulty_competitor_is_side_chain() {
        let g = genesis();
        let mut store = ChainStore::with_genesis(g.clone()).unwrap();
        let a1 = child(&g, "a", 1);
        let a2 = child(&a1, "a", 1);
        let a3 = child(&a2, "a", 1);
        for b in [&a1, &a2, &a3] {
            assert_eq!(store.insert(b.clone()).unwrap().outcome, InsertOutcome::ExtendsHead);
        }
        let b3 = child(&a2, "b", 1);
        let ins = store.insert(b3).unwrap();
        assert_eq!(ins.outcome, InsertOutcome::SideChain);
        assert!(ins.head_change.is_none());
        assert_eq!(store.head_hash(), Some(a3.hash));
    }

    #[test]
    fn heavier_branch_triggers_reorg() {
        // genesis td 1; chain A: three blocks of difficulty 1 -> td 4.
        // chain B from genesis: one block of difficulty 2 (td 3), then one of
        // difficulty 2 (td 5 > 4) -> reorg of depth 3.
        let g = genesis();
        let mut store = ChainStore::with_genesis(g.clone()).unwrap();
        let a1 = child(&g, "a", 1);
        let a2 = child(&a1, "a", 1);
        let a3 = child(&a2, "a", 1);
        for b in [&a1, &a2, &a3] {
            store.insert(b.clone()).unwrap();
        }
        assert_eq!(store.head_total_difficulty(), 4);
        let b1 = child(&g, "b", 2);
        assert_eq!(store.insert(b1.clone()).unwrap().outcome, InsertOutcome::SideChain);
        let b2 = child(&b1, "b", 2);
        let ins = store.insert(b2.clone()).unwrap();
        assert_eq!(ins.outcome, InsertOutcome::Reorg { old_head: a3.hash, new_head: b2.hash });
        assert_eq!(ins.head_change.as_ref().unwrap().reorg_depth, 3);
        assert_eq!(store.head_total_difficulty(), 5);
        let main: Vec<_> = store.mainchain().iter().map(|b| b.hash).collect();
        assert_eq!(main, vec![g.hash, b1.hash, b2.hash]);
        assert!(!store.is_canonical(&a1.hash));
    }

    #[test]
    fn orphans_wait_for_parent() {
        let g = genesis();
        let mut store = ChainStore::with_genesis(g.clone()).unwrap();
        let b1 = child(&g, "a", 1);
        let b2 = child(&b1, "a", 1);
        let b3 = child(&b2, "a", 1);
        assert_eq!(store.insert(b3.clone()).unwrap().outcome, InsertOutcome::OrphanedPending);
        assert_eq!(store.insert(b2.clone()).unwrap().outcome, InsertOutcome::OrphanedPending);
        assert_eq!(store.insert(b3.clone()).unwrap().outcome, InsertOutcome::Duplicate);
        let ins = store.insert(b1.clone()).unwrap();
        assert_eq!(ins.outcome, InsertOutcome::ExtendsHead);
        assert_eq!(ins.adopted, vec![b2.hash, b3.hash]);
        assert_eq!(store.head_hash(), Some(b3.hash));
        assert_eq!(store.pending_len(), 0);
    }

    #[test]
    fn orphan_pool_is_bounded_fifo() {
        let g = genesis();
        let mut store = ChainStore::with_genesis(g.clone()).unwrap();
        let missing = Hash32([9; 32]);
        let parked: Vec<Block> =
            (0..ORPHAN_POOL_CAP as u64 + 5).map(|n| Block::seal(7, missing, "x", n, 1, 0)).collect();
        for b in &parked {
            store.insert(b.clone()).unwrap();
        }
        assert_eq!(store.pending_len(), ORPHAN_POOL_CAP);
        assert!(!store.is_known(&parked[4].hash));
        assert!(store.is_known(&parked[5].hash));
    }

    #[test]
    fn tampered_and_underpowered_blocks_are_rejected() {
        let g = genesis();
        let mut store = ChainStore::with_genesis(g.clone()).unwrap();
        let mut bad = child(&g, "a", 1);
        bad.nonce ^= 1;
        assert!(matches!(store.insert(bad), Err(ChainError::BadHash(_))));
        let weak =
            (0u64..).map(|n| Block::seal(1, g.hash, "a", n, 1 << 20, 0)).find(|b| !pow_valid(b).unwrap()).unwrap();
        assert!(matches!(store.insert(weak), Err(ChainError::InvalidPow(_))));
    }

    #[test]
    fn height_must_follow_parent() {
        let g = genesis();
        let mut store = ChainStore::with_genesis(g.clone()).unwrap();
        let skip = Block::seal(2, g.hash, "a", 0, 1, 0);
        assert!(matches!(store.insert(skip), Err(ChainError::BadHeight { .. })));
    }

    #[test]
    fn mainchain_excludes_side_branch() {
        // g - 1 - 2 - 3a - 4a - 5a, and 3b off block 2.
        let g = genesis();
        let mut store = ChainStore::with_genesis(g.clone()).unwrap();
        let b1 = child(&g, "a", 1);
        let b2 = child(&b1, "a", 1);
        let b3b = child(&b2, "b", 1);
        let b3a = child(&b2, "a", 1);
        let b4a = child(&b3a, "a", 1);
        let b5a = child(&b4a, "a", 1);
        for b in [&b1, &b2, &b3b, &b3a, &b4a, &b5a] {
            store.insert(b.clone()).unwrap();
        }
        let main = mainchain_of(&store);
        assert_eq!(main.len(), 6);
        assert!(main.iter().all(|b| b.hash != b3b.hash));
        for pair in main.windows(2) {
            assert_eq!(pair[1].parent_hash, pair[0].hash);
            assert_eq!(pair[1].number, pair[0].number + 1);
        }
        assert_eq!(store.canonical_range(2, 2).len(), 2);
        assert_eq!(store.canonical_range(5, 10).len(), 1);
        assert!(store.is_ancestor(&b2.hash, &b5a.hash));
        assert!(!store.is_ancestor(&b3b.hash, &b5a.hash));
    }
}
