//! Hand-built event logs from a small block-tree description.

use std::collections::BTreeMap;

use chainbox_core::chain::{Block, GenesisConfig, Hash32};
use chainbox_core::eventlog::EventLog;
use chainbox_core::node::{EventKind, NodeEvent};

pub struct DagBuilder {
    pub genesis: Block,
    pub logs: BTreeMap<String, EventLog>,
    pub named: BTreeMap<String, Block>,
    clock: u64,
}

impl DagBuilder {
    pub fn new(nodes: &[&str]) -> Self {
        let genesis = GenesisConfig::new(1, 100).genesis_block();
        let logs = nodes.iter().map(|n| (n.to_string(), EventLog::new(*n, genesis.clone()))).collect();
        DagBuilder { genesis, logs, named: BTreeMap::new(), clock: 0 }
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    fn push(&mut self, node: &str, kind: EventKind) {
        let at_us = self.tick();
        self.logs.get_mut(node).unwrap_or_else(|| panic!("unknown node {node}")).push(NodeEvent {
            at_us,
            node_id: node.to_string(),
            kind,
        });
    }

    pub fn block(&self, name: &str) -> &Block {
        &self.named[name]
    }

    pub fn hash(&self, name: &str) -> Hash32 {
        self.named[name].hash
    }

    /// Seals a block on `parent` (None = genesis) without logging it.
    pub fn forge(&mut self, name: &str, parent: Option<&str>, miner: &str, difficulty: u64) -> Block {
        let parent = parent.map_or(self.genesis.clone(), |p| self.named[p].clone());
        let nonce = self.named.len() as u64;
        let ts = self.tick();
        let block = Block::seal(parent.number + 1, parent.hash, miner, nonce, difficulty, ts);
        self.named.insert(name.to_string(), block.clone());
        block
    }

    /// `miner` mines `name` on `parent`; logs a Mined record.
    pub fn mine(&mut self, name: &str, parent: Option<&str>, miner: &str) -> &mut Self {
        self.mine_d(name, parent, miner, 100)
    }

    pub fn mine_d(&mut self, name: &str, parent: Option<&str>, miner: &str, difficulty: u64) -> &mut Self {
        let block = self.forge(name, parent, miner, difficulty);
        self.push(miner, EventKind::Mined { block });
        self
    }

    /// Mines a linear run of blocks named `prefix1..prefixK` on `parent`.
    pub fn chain(&mut self, prefix: &str, parent: Option<&str>, miners: &[&str]) -> &mut Self {
        let mut parent = parent.map(str::to_string);
        for (i, miner) in miners.iter().enumerate() {
            let name = format!("{prefix}{}", i + 1);
            self.mine(&name, parent.as_deref(), miner);
            parent = Some(name);
        }
        self
    }

    pub fn receive(&mut self, node: &str, name: &str, from: &str) -> &mut Self {
        let block = self.named[name].clone();
        self.push(node, EventKind::Received { block, from_peer: from.to_string() });
        self
    }

    /// Every node other than the miner receives every named block.
    pub fn broadcast_all(&mut self) -> &mut Self {
        let nodes: Vec<String> = self.logs.keys().cloned().collect();
        let blocks: Vec<(String, Block)> = self.named.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        for (name, block) in blocks {
            for node in &nodes {
                if *node != block.miner_id && self.logs[node].blocks().all(|b| b.hash != block.hash) {
                    self.receive(node, &name, &block.miner_id);
                }
            }
        }
        self
    }

    pub fn head(&mut self, node: &str, name: &str) -> &mut Self {
        let block = self.named[name].clone();
        self.push(
            node,
            EventKind::HeadChanged {
                old_hash: Hash32::ZERO,
                new_hash: block.hash,
                new_height: block.number,
                reorg_depth: 0,
            },
        );
        self
    }

    /// Logs a block whose parent appears in no log.
    pub fn detached(&mut self, node: &str, number: u64, seed: u8) -> &mut Self {
        let block = Block::seal(number, Hash32([seed; 32]), node, u64::from(seed), 100, 0);
        self.push(node, EventKind::Mined { block });
        self
    }

    pub fn logs(&self) -> Vec<EventLog> {
        self.logs.values().cloned().collect()
    }

    pub fn nodes(&self) -> Vec<String> {
        self.logs.keys().cloned().collect()
    }
}
