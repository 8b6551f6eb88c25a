//! Deterministic discrete-event network of [`Node`]s.
//!
//! One scheduler owns every node, the simulated transport and a timer heap,
//! all on a microsecond clock. Mining is paced by a per-node hashrate: each
//! mining tick performs `hashrate × tick` real nonce attempts (fractional
//! remainders carried), spread evenly over the tick.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use thiserror::Error;

use crate::chain::{Block, GenesisConfig, Hash32};
use crate::eventlog::EventLog;
use crate::node::{EventKind, Node, NodeError, NodeParams, NodeStatus, Outbound};
use crate::topology::TopologySpec;
use crate::wire::{Command, LatencyModel, Message, SimTransport, WireError};

pub const DEFAULT_TICK_US: u64 = 2_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub genesis: GenesisConfig,
    pub latency: LatencyModel,
    pub seed: u64,
    /// Nonce attempts per second, per node.
    pub hashrate: f64,
    pub tick_us: u64,
}

impl SimConfig {
    pub fn new(genesis: GenesisConfig, hashrate: f64, latency: LatencyModel, seed: u64) -> Self {
        SimConfig { genesis, latency, seed, hashrate, tick_us: DEFAULT_TICK_US }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Command { node: usize, command: Command },
    Connect { a: usize, b: usize },
    Disconnect { a: usize, b: usize },
}

#[derive(Clone, Debug)]
enum Timer {
    Mine { node: usize, epoch: u64 },
    Found { node: usize, epoch: u64, block: Block },
    Action(Action),
}

struct Scheduled {
    at_us: u64,
    seq: u64,
    timer: Timer,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at_us, self.seq) == (other.at_us, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at_us, self.seq).cmp(&(other.at_us, other.seq))
    }
}

struct SimNode {
    node: Node,
    hashrate: f64,
    carry: f64,
    /// Bumped whenever the mining candidate goes stale; timers from older
    /// epochs are ignored.
    epoch: u64,
    mine_scheduled: bool,
    /// Attempts have been accounted up to this time.
    mined_until_us: u64,
    log: EventLog,
}

pub struct Simulation {
    now_us: u64,
    tick_us: u64,
    nodes: Vec<SimNode>,
    index: HashMap<String, usize>,
    transport: SimTransport<Message>,
    timers: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    links: BTreeSet<(usize, usize)>,
}

/// Per-node RNG seed derived from the run seed.
pub fn node_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl Simulation {
    pub fn new(config: &SimConfig, node_ids: &[String]) -> Result<Self, SimError> {
        config.latency.validate()?;
        if !(config.hashrate.is_finite() && config.hashrate >= 0.0) {
            return Err(SimError::InvalidParameter("hashrate must be finite and non-negative".into()));
        }
        if config.tick_us == 0 {
            return Err(SimError::InvalidParameter("tick must be positive".into()));
        }
        let mut nodes = Vec::with_capacity(node_ids.len());
        let mut index = HashMap::new();
        for (i, id) in node_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(SimError::InvalidParameter(format!("duplicate node id {id}")));
            }
            let node = Node::new(NodeParams::new(id.clone(), config.genesis.clone(), node_seed(config.seed, i)))?;
            let log = EventLog::new(id.clone(), node.genesis().clone());
            nodes.push(SimNode {
                node,
                hashrate: config.hashrate,
                carry: 0.0,
                epoch: 0,
                mine_scheduled: false,
                mined_until_us: 0,
                log,
            });
        }
        Ok(Simulation {
            now_us: 0,
            tick_us: config.tick_us,
            nodes,
            index,
            transport: SimTransport::new(config.latency),
            timers: BinaryHeap::new(),
            seq: 0,
            links: BTreeSet::new(),
        })
    }

    /// Nodes `n0..n{n-1}` wired along every topology edge at time zero.
    pub fn with_topology(config: &SimConfig, topology: &TopologySpec) -> Result<Self, SimError> {
        let topology = topology.clone().normalized().map_err(|e| SimError::InvalidParameter(e.to_string()))?;
        let violations = topology.validate();
        if !violations.is_empty() {
            return Err(SimError::InvalidParameter(format!("invalid topology: {violations:?}")));
        }
        let ids: Vec<String> = (0..topology.n).map(|i| format!("n{i}")).collect();
        let mut sim = Simulation::new(config, &ids)?;
        for [a, b] in topology.edges {
            sim.connect(a, b)?;
        }
        Ok(sim)
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i].node
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn set_hashrate(&mut self, i: usize, hashrate: f64) {
        self.nodes[i].hashrate = hashrate;
    }

    /// Node pairs currently linked, smaller index first.
    pub fn links(&self) -> &BTreeSet<(usize, usize)> {
        &self.links
    }

    pub fn in_flight(&self) -> usize {
        self.transport.in_flight()
    }

    fn check_index(&self, i: usize) -> Result<(), SimError> {
        if i < self.nodes.len() {
            Ok(())
        } else {
            Err(SimError::InvalidParameter(format!("no node with index {i}")))
        }
    }

    /// Opens a link now; both ends send their Status as the handshake.
    pub fn connect(&mut self, a: usize, b: usize) -> Result<(), SimError> {
        self.check_index(a)?;
        self.check_index(b)?;
        if a == b {
            return Err(SimError::InvalidParameter("cannot connect a node to itself".into()));
        }
        if !self.links.insert((a.min(b), a.max(b))) {
            return Ok(());
        }
        for (from, to) in [(a, b), (b, a)] {
            let status = self.nodes[from].node.status_message();
            self.transport.send(self.now_us, from as u32, to as u32, Message::Status(status));
        }
        Ok(())
    }

    pub fn disconnect(&mut self, a: usize, b: usize) -> Result<(), SimError> {
        self.check_index(a)?;
        self.check_index(b)?;
        if !self.links.remove(&(a.min(b), a.max(b))) {
            return Ok(());
        }
        self.transport.cut(a as u32, b as u32);
        for (this, other) in [(a, b), (b, a)] {
            let peer = self.nodes[other].node.id().to_string();
            let now = self.now_us;
            let outs = self.with_node(this, |n| n.peer_disconnected(&peer, now));
            self.route(this, outs);
        }
        Ok(())
    }

    pub fn command(&mut self, i: usize, command: &Command) -> Result<(), SimError> {
        self.check_index(i)?;
        self.with_node(i, |n| {
            n.command(command);
            Vec::new()
        });
        Ok(())
    }

    pub fn start_mining_all(&mut self) {
        for i in 0..self.nodes.len() {
            self.command(i, &Command::StartMining).expect("index in range");
        }
    }

    pub fn stop_mining_all(&mut self) {
        for i in 0..self.nodes.len() {
            self.command(i, &Command::StopMining).expect("index in range");
        }
    }

    /// Queues `action` to run at `at_us` (not before the current time).
    pub fn schedule(&mut self, at_us: u64, action: Action) {
        self.push_timer(at_us.max(self.now_us), Timer::Action(action));
    }

    fn push_timer(&mut self, at_us: u64, timer: Timer) {
        self.timers.push(Reverse(Scheduled { at_us, seq: self.seq, timer }));
        self.seq += 1;
    }

    /// Time of the earliest pending delivery or timer.
    pub fn next_event_time(&self) -> Option<u64> {
        let timer = self.timers.peek().map(|Reverse(s)| s.at_us);
        match (self.transport.next_delivery_at(), timer) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Processes the earliest pending event. Returns false when idle.
    pub fn step(&mut self) -> bool {
        let Some(at) = self.next_event_time() else {
            return false;
        };
        self.now_us = self.now_us.max(at);
        // Deliveries go before timers due at the same instant.
        if let Some(d) = self.transport.pop_due(at) {
            let (src, dst) = (d.source as usize, d.destination as usize);
            let from = self.nodes[src].node.id().to_string();
            let now = self.now_us;
            let outs = self.with_node(dst, |n| n.handle_message(&from, d.payload, now));
            self.route(dst, outs);
            return true;
        }
        let Reverse(s) = self.timers.pop().expect("timer due");
        match s.timer {
            Timer::Mine { node, epoch } => self.mine_tick(node, epoch),
            Timer::Found { node, epoch, block } => {
                if self.nodes[node].epoch == epoch {
                    self.nodes[node].mine_scheduled = false;
                    let now = self.now_us;
                    let outs = self.with_node(node, |n| n.commit_mined(block, now));
                    self.route(node, outs);
                }
            }
            Timer::Action(action) => {
                let result = match action {
                    Action::Command { node, command } => self.command(node, &command),
                    Action::Connect { a, b } => self.connect(a, b),
                    Action::Disconnect { a, b } => self.disconnect(a, b),
                };
                if let Err(e) = result {
                    log::warn!("scheduled action failed: {e}");
                }
            }
        }
        true
    }

    /// Processes every event due at or before `t_us`, then advances the
    /// clock to `t_us`.
    pub fn run_until_time(&mut self, t_us: u64) {
        while self.next_event_time().is_some_and(|at| at <= t_us) {
            self.step();
        }
        self.now_us = self.now_us.max(t_us);
    }

    /// Steps while `keep_going` holds. Returns false if the simulation went
    /// idle first.
    pub fn run_while(&mut self, mut keep_going: impl FnMut(&Simulation) -> bool) -> bool {
        while keep_going(self) {
            if !self.step() {
                return false;
            }
        }
        true
    }

    /// Runs until some node's head reaches `height`.
    pub fn run_until_height(&mut self, height: u64) -> bool {
        self.run_while(|s| s.max_height() < height)
    }

    /// Runs until nothing is in flight and no timer is pending. Mining must
    /// be stopped first or this never returns.
    pub fn quiesce(&mut self) {
        while self.step() {}
    }

    /// Stops all mining and waits for quiescence. If the nodes are then
    /// split between equally heavy heads, one node mines a single block on
    /// the preferred head so that everyone converges on it, as the next
    /// block would in a live network. Returns how many such rounds ran.
    pub fn stop_and_settle(&mut self, max_rounds: usize) -> usize {
        self.stop_mining_all();
        self.quiesce();
        let mut rounds = 0;
        while !self.in_consensus() && rounds < max_rounds && !self.nodes.is_empty() {
            rounds += 1;
            let best = self.preferred_head();
            let Some(miner) = (0..self.nodes.len())
                .find(|&i| self.nodes[i].node.store().head_hash() == Some(best) && !self.nodes[i].node.is_shut_down())
            else {
                break;
            };
            let mined_before = self.mined_count(miner);
            self.command(miner, &Command::StartMining).expect("index in range");
            let progressed = self.run_while(|s| s.mined_count(miner) == mined_before);
            self.command(miner, &Command::StopMining).expect("index in range");
            self.quiesce();
            if !progressed {
                break;
            }
        }
        rounds
    }

    fn mined_count(&self, i: usize) -> usize {
        self.nodes[i].log.events.iter().filter(|e| matches!(e.kind, EventKind::Mined { .. })).count()
    }

    /// Head with the greatest total difficulty among the nodes' heads,
    /// lowest hash on ties.
    pub fn preferred_head(&self) -> Hash32 {
        self.nodes
            .iter()
            .map(|n| {
                let store = n.node.store();
                (store.head_total_difficulty(), Reverse(store.head_hash().expect("genesis stored")))
            })
            .max()
            .map(|(_, Reverse(h))| h)
            .unwrap_or(Hash32::ZERO)
    }

    pub fn heads(&self) -> Vec<Hash32> {
        self.nodes.iter().map(|n| n.node.store().head_hash().expect("genesis stored")).collect()
    }

    pub fn in_consensus(&self) -> bool {
        self.heads().windows(2).all(|w| w[0] == w[1])
    }

    pub fn max_height(&self) -> u64 {
        self.nodes.iter().map(|n| n.node.store().head_number()).max().unwrap_or(0)
    }

    pub fn statuses(&self) -> Vec<NodeStatus> {
        self.nodes.iter().map(|n| n.node.status()).collect()
    }

    pub fn logs(&self) -> Vec<&EventLog> {
        self.nodes.iter().map(|n| &n.log).collect()
    }

    pub fn into_logs(self) -> Vec<EventLog> {
        self.nodes.into_iter().map(|n| n.log).collect()
    }

    pub fn hash_attempts(&self, i: usize) -> u64 {
        self.nodes[i].node.hash_attempts()
    }

    /// Runs `f` against node `i`, collects its new events and keeps its
    /// mining schedule in step with head changes and mining state.
    fn with_node(&mut self, i: usize, f: impl FnOnce(&mut Node) -> Vec<Outbound>) -> Vec<Outbound> {
        let now = self.now_us;
        let sn = &mut self.nodes[i];
        let head_before = sn.node.store().head_hash();
        let could_mine = sn.node.can_mine();
        let outs = f(&mut sn.node);
        for event in sn.node.drain_events() {
            sn.log.push(event);
        }
        let head_moved = sn.node.store().head_hash() != head_before;
        let can_mine = sn.node.can_mine();
        if head_moved || can_mine != could_mine || (can_mine && !sn.mine_scheduled) {
            sn.epoch += 1;
            sn.mine_scheduled = false;
            if can_mine {
                sn.mine_scheduled = true;
                let at = now.max(sn.mined_until_us);
                let epoch = sn.epoch;
                self.push_timer(at, Timer::Mine { node: i, epoch });
            }
        }
        outs
    }

    fn mine_tick(&mut self, i: usize, epoch: u64) {
        let now = self.now_us;
        let tick = self.tick_us;
        let sn = &mut self.nodes[i];
        if sn.epoch != epoch {
            return;
        }
        if !sn.node.can_mine() {
            sn.mine_scheduled = false;
            return;
        }
        let budget = sn.carry + sn.hashrate * tick as f64 / 1e6;
        let attempts = budget.floor();
        sn.carry = budget - attempts;
        match sn.node.mine(attempts as u64, now, tick) {
            Some((block, at_us)) => {
                sn.carry = 0.0;
                sn.mined_until_us = at_us;
                self.push_timer(at_us, Timer::Found { node: i, epoch, block });
            }
            None => {
                sn.mined_until_us = now + tick;
                self.push_timer(now + tick, Timer::Mine { node: i, epoch });
            }
        }
    }

    fn route(&mut self, from: usize, outs: Vec<Outbound>) {
        for out in outs {
            let Some(&to) = self.index.get(&out.to) else {
                log::warn!("{}: no route to {}", self.nodes[from].node.id(), out.to);
                continue;
            };
            if !self.links.contains(&(from.min(to), from.max(to))) {
                continue;
            }
            self.transport.send(self.now_us, from as u32, to as u32, out.message);
        }
    }
}
