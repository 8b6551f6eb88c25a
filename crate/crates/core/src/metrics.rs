//! Consensus-quality metrics computed from per-node event logs.
//!
//! Counting conventions:
//! - genesis is never counted in `B` or `M`;
//! - `Θ = B \ M`;
//! - blocks whose ancestry does not reach genesis are *detached*: counted
//!   separately and excluded from `B`;
//! - the canonical head is the heaviest final head of any node, lowest hash
//!   on ties.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{Block, Hash32};
use crate::eventlog::EventLog;
use crate::node::EventKind;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("log corruption: {0}")]
    LogCorruption(String),
}

/// Global block DAG reconstructed from all logs.
#[derive(Clone, Debug)]
pub struct BlockDag {
    genesis: Block,
    /// `B`: every connected non-genesis block.
    blocks: BTreeMap<Hash32, Block>,
    total_difficulty: HashMap<Hash32, u128>,
    detached: BTreeSet<Hash32>,
    /// `M` in ascending height, genesis excluded.
    mainchain: Vec<Hash32>,
    mainchain_set: BTreeSet<Hash32>,
    canonical_head: Hash32,
    /// Block hash to the node whose log holds its Mined record.
    miners: BTreeMap<Hash32, String>,
}

pub fn build_dag(logs: &[EventLog]) -> Result<BlockDag, MetricsError> {
    let first = logs.first().ok_or_else(|| MetricsError::InvalidInput("no event logs".into()))?;
    let genesis = first.genesis.clone();
    if !genesis.hash_matches() || genesis.number != 0 {
        return Err(MetricsError::InvalidInput(format!("malformed genesis in log of {}", first.node_id)));
    }
    if let Some(other) = logs.iter().find(|l| l.genesis != genesis) {
        return Err(MetricsError::InvalidInput(format!(
            "logs of {} and {} start from different genesis blocks",
            first.node_id, other.node_id
        )));
    }
    let mut seen_nodes = BTreeSet::new();
    for log in logs {
        if !seen_nodes.insert(&log.node_id) {
            return Err(MetricsError::InvalidInput(format!("two logs for node {}", log.node_id)));
        }
    }

    let mut all: HashMap<Hash32, Block> = HashMap::new();
    let mut miners = BTreeMap::new();
    for log in logs {
        for event in &log.events {
            let Some(block) = event.kind.block() else {
                continue;
            };
            if !block.hash_matches() {
                return Err(MetricsError::LogCorruption(format!(
                    "block {} in log of {} does not match its hash",
                    block.hash, log.node_id
                )));
            }
            if block.hash == genesis.hash {
                continue;
            }
            match all.get(&block.hash) {
                Some(known) if known != block => {
                    return Err(MetricsError::LogCorruption(format!("conflicting contents for block {}", block.hash)));
                }
                Some(_) => {}
                None => {
                    all.insert(block.hash, block.clone());
                }
            }
            if let EventKind::Mined { .. } = event.kind {
                if block.miner_id != log.node_id {
                    return Err(MetricsError::LogCorruption(format!(
                        "{} logged mining block {} credited to {}",
                        log.node_id, block.hash, block.miner_id
                    )));
                }
                if miners.insert(block.hash, log.node_id.clone()).is_some() {
                    return Err(MetricsError::LogCorruption(format!("block {} mined more than once", block.hash)));
                }
            }
        }
    }

    // Total difficulty by walking up to the nearest block already resolved.
    let mut total_difficulty: HashMap<Hash32, u128> = HashMap::new();
    total_difficulty.insert(genesis.hash, u128::from(genesis.difficulty));
    let mut detached = BTreeSet::new();
    let mut hashes: Vec<Hash32> = all.keys().copied().collect();
    hashes.sort();
    for start in hashes {
        if total_difficulty.contains_key(&start) || detached.contains(&start) {
            continue;
        }
        let mut path = vec![start];
        let base = loop {
            let parent = all[path.last().expect("non-empty")].parent_hash;
            if let Some(&td) = total_difficulty.get(&parent) {
                break Some((parent, td));
            }
            if detached.contains(&parent) || path.len() > all.len() {
                break None;
            }
            match all.get(&parent) {
                Some(_) => path.push(parent),
                None => break None,
            }
        };
        match base {
            Some((parent, mut td)) => {
                let mut parent_number = if parent == genesis.hash { 0 } else { all[&parent].number };
                for hash in path.into_iter().rev() {
                    let block = &all[&hash];
                    if block.number != parent_number + 1 {
                        return Err(MetricsError::LogCorruption(format!(
                            "block {hash} has height {} but its parent has height {parent_number}",
                            block.number
                        )));
                    }
                    parent_number = block.number;
                    td += u128::from(block.difficulty);
                    total_difficulty.insert(hash, td);
                }
            }
            None => detached.extend(path),
        }
    }

    let blocks: BTreeMap<Hash32, Block> = all.into_iter().filter(|(h, _)| !detached.contains(h)).collect();

    let mut canonical_head = genesis.hash;
    for log in logs {
        let head = log.final_head();
        let Some(&td) = total_difficulty.get(&head) else {
            log::warn!("final head {head} of {} is not in the reconstructed DAG", log.node_id);
            continue;
        };
        let best = total_difficulty[&canonical_head];
        if td > best || (td == best && head < canonical_head) {
            canonical_head = head;
        }
    }

    let mut mainchain = Vec::new();
    let mut cursor = canonical_head;
    while cursor != genesis.hash {
        mainchain.push(cursor);
        cursor = blocks[&cursor].parent_hash;
    }
    mainchain.reverse();
    let mainchain_set = mainchain.iter().copied().collect();
    miners.retain(|h, _| blocks.contains_key(h));

    Ok(BlockDag { genesis, blocks, total_difficulty, detached, mainchain, mainchain_set, canonical_head, miners })
}

impl BlockDag {
    pub fn genesis(&self) -> &Block {
        &self.genesis
    }

    /// `|B|`.
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// `|M|`.
    pub fn mainchain_len(&self) -> usize {
        self.mainchain.len()
    }

    /// `|Θ|`.
    pub fn off_chain_count(&self) -> usize {
        self.blocks.len() - self.mainchain.len()
    }

    pub fn detached_count(&self) -> usize {
        self.detached.len()
    }

    pub fn canonical_head(&self) -> Hash32 {
        self.canonical_head
    }

    pub fn mainchain(&self) -> impl Iterator<Item = &Block> {
        self.mainchain.iter().map(|h| &self.blocks[h])
    }

    pub fn off_chain(&self) -> impl Iterator<Item = &Block> {
        self.blocks.values().filter(|b| !self.mainchain_set.contains(&b.hash))
    }

    pub fn is_mainchain(&self, hash: &Hash32) -> bool {
        self.mainchain_set.contains(hash)
    }

    pub fn get(&self, hash: &Hash32) -> Option<&Block> {
        self.blocks.get(hash)
    }

    pub fn total_difficulty(&self, hash: &Hash32) -> Option<u128> {
        self.total_difficulty.get(hash).copied()
    }

    pub fn miner_of(&self, hash: &Hash32) -> Option<&str> {
        self.miners.get(hash).map(String::as_str)
    }

    pub fn detached(&self) -> impl Iterator<Item = &Hash32> {
        self.detached.iter()
    }

    /// Mean time between mainchain blocks, from block timestamps.
    pub fn mean_mainchain_interval_ms(&self) -> Option<f64> {
        let last = self.mainchain().last()?;
        Some(last.timestamp_ms.saturating_sub(self.genesis.timestamp_ms) as f64 / self.mainchain.len() as f64)
    }
}

/// `μ = |M| / |B|`.
pub fn mainchain_rate<S: Scalar>(dag: &BlockDag) -> Result<S, MetricsError> {
    if dag.block_count() == 0 {
        return Err(MetricsError::InvalidInput("no blocks were produced".into()));
    }
    Ok(S::from_ratio(dag.mainchain_len() as u64, dag.block_count() as u64))
}

/// `F`: off-chain blocks sharing a parent with a mainchain block, averaged
/// over the mainchain.
pub fn branching_ratio<S: Scalar>(dag: &BlockDag) -> Result<S, MetricsError> {
    if dag.mainchain_len() == 0 {
        return Err(MetricsError::InvalidInput("the mainchain is empty".into()));
    }
    let mut off_chain_children: HashMap<Hash32, u64> = HashMap::new();
    for c in dag.off_chain() {
        *off_chain_children.entry(c.parent_hash).or_default() += 1;
    }
    let sum: u64 = dag.mainchain().map(|b| off_chain_children.get(&b.parent_hash).copied().unwrap_or(0)).sum();
    Ok(S::from_ratio(sum, dag.mainchain_len() as u64))
}

/// Share of mainchain blocks mined by each of `nodes` (and by any other node
/// that mined one). Mainchain blocks without a Mined record count toward no
/// one.
pub fn contribution_ratio<S: Scalar>(dag: &BlockDag, nodes: &[String]) -> Result<BTreeMap<String, S>, MetricsError> {
    if dag.mainchain_len() == 0 {
        return Err(MetricsError::InvalidInput("the mainchain is empty".into()));
    }
    let mut counts: BTreeMap<String, u64> = nodes.iter().map(|n| (n.clone(), 0)).collect();
    let mut unattributed = 0;
    for block in dag.mainchain() {
        match dag.miner_of(&block.hash) {
            Some(miner) => *counts.entry(miner.to_string()).or_default() += 1,
            None => unattributed += 1,
        }
    }
    if unattributed > 0 {
        log::warn!("{unattributed} mainchain blocks have no Mined record; contributions sum below 1");
    }
    let m = dag.mainchain_len() as u64;
    Ok(counts.into_iter().map(|(node, n)| (node, S::from_ratio(n, m))).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialConsensus {
    /// Height of the node's first mined block that made it into the mainchain.
    Height(u64),
    NotAchieved,
}

/// `I` per node: the height of the first block the node mined (in its own
/// log order) that the canonical chain includes.
pub fn initial_consensus(logs: &[EventLog], dag: &BlockDag) -> BTreeMap<String, InitialConsensus> {
    logs.iter()
        .map(|log| {
            let first = log.events.iter().find_map(|e| match &e.kind {
                EventKind::Mined { block } if dag.is_mainchain(&block.hash) => Some(block.number),
                _ => None,
            });
            (log.node_id.clone(), first.map_or(InitialConsensus::NotAchieved, InitialConsensus::Height))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub blocks: u64,
    pub mainchain: u64,
    pub off_chain: u64,
    pub detached: u64,
    /// Mainchain blocks with no Mined record in any log.
    pub unattributed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<S> {
    pub mainchain_rate: S,
    pub branching_ratio: S,
    pub contribution_ratio: BTreeMap<String, S>,
    pub initial_consensus: BTreeMap<String, InitialConsensus>,
    pub counts: Counts,
    pub canonical_head: Hash32,
    pub canonical_height: u64,
}

impl<S: Scalar> MetricsReport<S> {
    pub fn from_dag(logs: &[EventLog], dag: &BlockDag, nodes: &[String]) -> Result<Self, MetricsError> {
        let mut all_nodes: Vec<String> = nodes.to_vec();
        all_nodes.extend(logs.iter().map(|l| l.node_id.clone()));
        let unattributed = dag.mainchain().filter(|b| dag.miner_of(&b.hash).is_none()).count();
        Ok(MetricsReport {
            mainchain_rate: mainchain_rate(dag)?,
            branching_ratio: branching_ratio(dag)?,
            contribution_ratio: contribution_ratio(dag, &all_nodes)?,
            initial_consensus: initial_consensus(logs, dag),
            counts: Counts {
                blocks: dag.block_count() as u64,
                mainchain: dag.mainchain_len() as u64,
                off_chain: dag.off_chain_count() as u64,
                detached: dag.detached_count() as u64,
                unattributed: unattributed as u64,
            },
            canonical_head: dag.canonical_head(),
            canonical_height: dag.mainchain_len() as u64,
        })
    }

    /// Builds the DAG from `logs` and computes every metric. `nodes` lists
    /// configured nodes that may have left no log.
    pub fn compute(logs: &[EventLog], nodes: &[String]) -> Result<Self, MetricsError> {
        let dag = build_dag(logs)?;
        Self::from_dag(logs, &dag, nodes)
    }

    pub fn contribution_total(&self) -> S {
        self.contribution_ratio.values().cloned().fold(S::zero(), |a, b| a + b)
    }

    pub fn map<T>(&self, f: impl Fn(&S) -> T) -> MetricsReport<T> {
        MetricsReport {
            mainchain_rate: f(&self.mainchain_rate),
            branching_ratio: f(&self.branching_ratio),
            contribution_ratio: self.contribution_ratio.iter().map(|(k, v)| (k.clone(), f(v))).collect(),
            initial_consensus: self.initial_consensus.clone(),
            counts: self.counts.clone(),
            canonical_head: self.canonical_head,
            canonical_height: self.canonical_height,
        }
    }

    pub fn to_f64(&self) -> MetricsReport<f64> {
        self.map(Scalar::to_f64)
    }

    /// Plain-text table for terminals.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let c = &self.counts;
        let _ = writeln!(out, "blocks |B|        {}", c.blocks);
        let _ = writeln!(out, "mainchain |M|     {}", c.mainchain);
        let _ = writeln!(out, "off-chain |Θ|     {}", c.off_chain);
        let _ = writeln!(out, "detached          {}", c.detached);
        if c.unattributed > 0 {
            let _ = writeln!(out, "unattributed      {}", c.unattributed);
        }
        let _ = writeln!(out, "mainchain rate μ  {:.4}", self.mainchain_rate.to_f64());
        let _ = writeln!(out, "branching F       {:.4}", self.branching_ratio.to_f64());
        let _ = writeln!(out, "head              {} (height {})", self.canonical_head.short(), self.canonical_height);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<12} {:>8} {:>10}", "node", "C", "I");
        for (node, ratio) in &self.contribution_ratio {
            let i = match self.initial_consensus.get(node) {
                Some(InitialConsensus::Height(h)) => h.to_string(),
                Some(InitialConsensus::NotAchieved) => "not-achieved".into(),
                None => "-".into(),
            };
            let _ = writeln!(out, "{:<12} {:>8.4} {:>10}", node, ratio.to_f64(), i);
        }
        out
    }
}

/// Exact report; ratios serialize as `[numerator, denominator]`.
pub type ExactMetrics = MetricsReport<Ratio<u64>>;
pub type FloatMetrics = MetricsReport<f64>;

/// What gets written to `metrics.json`: the exact report and its decimal
/// rendering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub exact: ExactMetrics,
    pub approx: FloatMetrics,
}

impl MetricsFile {
    pub fn new(exact: ExactMetrics) -> Self {
        let approx = exact.to_f64();
        MetricsFile { exact, approx }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}
