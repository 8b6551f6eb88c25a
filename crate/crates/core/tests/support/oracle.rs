//! Brute-force recount of the consensus metrics, written without the
//! library's DAG code: plain vectors, linear scans and recursion.

use std::collections::BTreeMap;

use chainbox_core::chain::{Block, Hash32};
use chainbox_core::eventlog::EventLog;
use chainbox_core::metrics::InitialConsensus;
use chainbox_core::node::EventKind;
use chainbox_core::Rational;

#[derive(Debug, PartialEq)]
pub struct Recount {
    pub blocks: usize,
    pub mainchain: usize,
    pub detached: usize,
    pub mu: Rational,
    pub f: Rational,
    pub c: BTreeMap<String, Rational>,
    pub i: BTreeMap<String, InitialConsensus>,
    pub head: Hash32,
}

fn find<'a>(all: &'a [Block], hash: &Hash32) -> Option<&'a Block> {
    all.iter().find(|b| b.hash == *hash)
}

/// Cumulative difficulty, or None when the ancestry never reaches genesis.
fn weight(all: &[Block], genesis: &Block, hash: &Hash32, depth: usize) -> Option<u128> {
    if *hash == genesis.hash {
        return Some(u128::from(genesis.difficulty));
    }
    if depth > all.len() {
        return None;
    }
    let b = find(all, hash)?;
    Some(weight(all, genesis, &b.parent_hash, depth + 1)? + u128::from(b.difficulty))
}

pub fn recount(logs: &[EventLog], nodes: &[String]) -> Recount {
    let genesis = logs[0].genesis.clone();
    let mut all: Vec<Block> = Vec::new();
    for log in logs {
        for e in &log.events {
            if let Some(b) = e.kind.block() {
                if b.hash != genesis.hash && !all.iter().any(|x| x.hash == b.hash) {
                    all.push(b.clone());
                }
            }
        }
    }
    let connected: Vec<Block> = all.iter().filter(|b| weight(&all, &genesis, &b.hash, 0).is_some()).cloned().collect();
    let detached = all.len() - connected.len();

    let mut head = genesis.hash;
    let mut head_weight = u128::from(genesis.difficulty);
    for log in logs {
        let mut last = genesis.hash;
        for e in &log.events {
            if let EventKind::HeadChanged { new_hash, .. } = e.kind {
                last = new_hash;
            }
        }
        let Some(w) = weight(&connected, &genesis, &last, 0) else {
            continue;
        };
        if w > head_weight || (w == head_weight && last < head) {
            head = last;
            head_weight = w;
        }
    }

    let mut mainchain: Vec<Block> = Vec::new();
    let mut cursor = head;
    while cursor != genesis.hash {
        let b = find(&connected, &cursor).expect("head ancestry is connected").clone();
        cursor = b.parent_hash;
        mainchain.push(b);
    }
    let on_main = |h: &Hash32| mainchain.iter().any(|m| m.hash == *h);
    let theta: Vec<&Block> = connected.iter().filter(|b| !on_main(&b.hash)).collect();

    let m = mainchain.len() as u64;
    let mut f_sum = 0u64;
    for b in &mainchain {
        for c in &theta {
            if b.parent_hash == c.parent_hash {
                f_sum += 1;
            }
        }
    }

    let mut c = BTreeMap::new();
    for node in nodes.iter().chain(logs.iter().map(|l| &l.node_id)) {
        let mut mined_on_main = 0u64;
        for log in logs.iter().filter(|l| l.node_id == *node) {
            for e in &log.events {
                if let EventKind::Mined { block } = &e.kind {
                    if on_main(&block.hash) {
                        mined_on_main += 1;
                    }
                }
            }
        }
        if m > 0 {
            c.insert(node.clone(), Rational::new(mined_on_main, m));
        }
    }

    let mut i = BTreeMap::new();
    for log in logs {
        let mut value = InitialConsensus::NotAchieved;
        for e in &log.events {
            if let EventKind::Mined { block } = &e.kind {
                if on_main(&block.hash) {
                    value = InitialConsensus::Height(block.number);
                    break;
                }
            }
        }
        i.insert(log.node_id.clone(), value);
    }

    Recount {
        blocks: connected.len(),
        mainchain: mainchain.len(),
        detached,
        mu: if connected.is_empty() { Rational::from(0) } else { Rational::new(m, connected.len() as u64) },
        f: if m == 0 { Rational::from(0) } else { Rational::new(f_sum, m) },
        c,
        i,
        head,
    }
}
