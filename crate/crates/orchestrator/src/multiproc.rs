//! Drives a multi-process run: one child process per node, wired over
//! loopback TCP and controlled through framed commands on stdin/stdout.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command as Process, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use chainbox_core::eventlog::{parse_line, EventLog};
use chainbox_core::node::{NodeEvent, NodeStatus};
use chainbox_core::sim::node_seed;
use chainbox_core::wire::{read_message, write_message, Command, Message, NodeReport};
use chainbox_core::{ExperimentConfig, StopCondition, TopologySpec};

use crate::registry::{now_ms, Observer, Outcome, RunOptions};
use crate::snapshot::{ReorgWatch, Tile};
use crate::SNAPSHOT_INTERVAL_MS;

/// Environment variable overriding the node executable.
pub const NODE_BIN_ENV: &str = "CHAINBOX_NODE_BIN";

#[derive(Clone, Debug)]
pub struct ProcessOptions {
    pub node_binary: PathBuf,
    /// Node logs are written to `work_dir/logs/<id>.jsonl`.
    pub work_dir: PathBuf,
    /// How long every node gets to report its listen address.
    pub launch_timeout: Duration,
    /// How long the whole topology gets to connect.
    pub wiring_timeout: Duration,
    /// After mining stops, heads must hold still this long before shutdown.
    pub quiet_period: Duration,
    pub quiesce_cap: Duration,
    /// Delete `work_dir` once the logs are read back.
    pub remove_work_dir: bool,
}

impl ProcessOptions {
    pub fn resolve(options: &RunOptions, run_id: &str) -> Self {
        let node_binary = options
            .node_binary
            .clone()
            .or_else(|| std::env::var_os(NODE_BIN_ENV).map(PathBuf::from))
            .or_else(|| std::env::current_exe().ok())
            .unwrap_or_else(|| PathBuf::from("chainbox"));
        let remove_work_dir = options.work_dir.is_none();
        let work_dir = options.work_dir.clone().unwrap_or_else(|| {
            std::env::temp_dir().join(format!("chainbox-{}-{run_id}-{}", std::process::id(), now_ms()))
        });
        ProcessOptions {
            node_binary,
            work_dir,
            launch_timeout: Duration::from_secs(10),
            wiring_timeout: Duration::from_secs(30),
            quiet_period: Duration::from_secs(2),
            quiesce_cap: Duration::from_secs(60),
            remove_work_dir,
        }
    }
}

type Reports = Receiver<(usize, Result<NodeReport, String>)>;

struct NodeProcess {
    id: String,
    child: Child,
    stdin: Option<ChildStdin>,
    log_path: PathBuf,
}

impl NodeProcess {
    fn send(&mut self, command: Command) -> Result<(), String> {
        let stdin = self.stdin.as_mut().ok_or_else(|| format!("node {} control pipe closed", self.id))?;
        write_message(stdin, &Message::Command(command))
            .and_then(|_| stdin.flush().map_err(Into::into))
            .map_err(|e| format!("node {}: {e}", self.id))
    }
}

/// Incremental reader of a node's log file.
struct LogTail {
    path: PathBuf,
    offset: u64,
    partial: String,
    events: Vec<NodeEvent>,
}

impl LogTail {
    fn new(path: PathBuf) -> Self {
        LogTail { path, offset: 0, partial: String::new(), events: Vec::new() }
    }

    fn poll(&mut self) {
        let Ok(mut file) = File::open(&self.path) else { return };
        if file.seek(SeekFrom::Start(self.offset)).is_err() {
            return;
        }
        let mut buf = String::new();
        let Ok(n) = file.read_to_string(&mut buf) else { return };
        self.offset += n as u64;
        self.partial.push_str(&buf);
        while let Some(end) = self.partial.find('\n') {
            let line: String = self.partial.drain(..=end).collect();
            if let Ok(Some(event)) = parse_line(line.trim_end()) {
                self.events.push(event);
            }
        }
    }
}

struct Fleet {
    nodes: Vec<NodeProcess>,
    reports: Reports,
    latest: Vec<Option<NodeStatus>>,
    tails: Vec<LogTail>,
    watch: ReorgWatch,
}

impl Fleet {
    fn broadcast(&mut self, command: Command) -> Result<(), String> {
        for node in &mut self.nodes {
            node.send(command.clone())?;
        }
        Ok(())
    }

    /// Handles reports until `deadline`. A node that dies or reports a fatal
    /// error ends the run.
    fn drain_until(&mut self, deadline: Instant) -> Result<(), String> {
        loop {
            let wait = deadline.saturating_duration_since(Instant::now());
            match self.reports.recv_timeout(wait) {
                Ok((i, Ok(NodeReport::Status(s)))) => self.latest[i] = Some(s),
                Ok((i, Ok(NodeReport::Fatal { reason }))) => {
                    return Err(format!("node {} failed: {reason}", self.nodes[i].id))
                }
                Ok((_, Ok(NodeReport::Listening { .. }))) => {}
                Ok((i, Err(e))) => return Err(format!("node {} exited: {e}", self.nodes[i].id)),
                Err(RecvTimeoutError::Timeout) => return Ok(()),
                Err(RecvTimeoutError::Disconnected) => return Err("all node processes exited".into()),
            }
        }
    }

    /// Asks every node for its status and waits one snapshot interval.
    fn poll(&mut self) -> Result<(), String> {
        self.broadcast(Command::ReportStatus)?;
        self.drain_until(Instant::now() + Duration::from_millis(SNAPSHOT_INTERVAL_MS))
    }

    fn tiles(&mut self) -> Vec<Tile> {
        let mut tiles = Vec::new();
        for (i, status) in self.latest.iter().enumerate() {
            let Some(status) = status else { continue };
            self.tails[i].poll();
            let reorg_depth = self.watch.observe(i, &self.tails[i].events);
            tiles.push(Tile { status: status.clone(), reorg_depth });
        }
        tiles
    }

    fn heads(&self) -> Vec<Option<(u64, chainbox_core::Hash32)>> {
        self.latest.iter().map(|s| s.as_ref().map(|s| (s.head_number, s.head_hash))).collect()
    }

    /// Shuts every node down, reaps it and reads what it logged.
    fn shutdown(&mut self) -> (Vec<EventLog>, Option<String>) {
        for node in &mut self.nodes {
            let _ = node.send(Command::Shutdown);
            node.stdin = None;
        }
        let deadline = Instant::now() + Duration::from_secs(5);
        for node in &mut self.nodes {
            loop {
                match node.child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(20)),
                    _ => {
                        log::warn!("killing node {}", node.id);
                        let _ = node.child.kill();
                        let _ = node.child.wait();
                        break;
                    }
                }
            }
        }
        let mut logs = Vec::new();
        let mut error = None;
        for node in &self.nodes {
            match EventLog::read_file(&node.log_path) {
                Ok(log) => logs.push(log),
                Err(e) => {
                    error.get_or_insert_with(|| format!("log of node {}: {e}", node.id));
                }
            }
        }
        (logs, error)
    }
}

impl Drop for Fleet {
    fn drop(&mut self) {
        for node in &mut self.nodes {
            if matches!(node.child.try_wait(), Ok(None)) {
                let _ = node.child.kill();
                let _ = node.child.wait();
            }
        }
    }
}

fn spawn_node(
    opts: &ProcessOptions,
    config: &ExperimentConfig,
    id: &str,
    seed: u64,
    epoch_ms: u64,
    log_path: &Path,
) -> std::io::Result<Child> {
    let mut cmd = Process::new(&opts.node_binary);
    cmd.arg("node")
        .args(["--id", id])
        .args(["--chain-id", &config.genesis.chain_id.to_string()])
        .args(["--difficulty", &config.genesis.difficulty.to_string()])
        .args(["--hashrate", &config.hashrate.to_string()])
        .args(["--seed", &seed.to_string()])
        .args(["--listen", "127.0.0.1:0"])
        .args(["--epoch-ms", &epoch_ms.to_string()])
        .arg("--log")
        .arg(log_path);
    if !config.genesis.extra.is_empty() {
        cmd.args(["--genesis-extra", &hex::encode(&config.genesis.extra)]);
    }
    cmd.stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::inherit()).spawn()
}

fn launch(config: &ExperimentConfig, opts: &ProcessOptions, epoch_ms: u64) -> Result<Fleet, String> {
    let log_dir = opts.work_dir.join("logs");
    fs::create_dir_all(&log_dir).map_err(|e| format!("creating {}: {e}", log_dir.display()))?;
    let (tx, reports) = mpsc::channel();
    let mut fleet = Fleet {
        nodes: Vec::new(),
        reports,
        latest: vec![None; config.n],
        tails: Vec::new(),
        watch: ReorgWatch::new(config.n),
    };
    for (i, id) in config.node_ids().into_iter().enumerate() {
        let log_path = log_dir.join(format!("{id}.jsonl"));
        let mut child = spawn_node(opts, config, &id, node_seed(epoch_ms, i), epoch_ms, &log_path)
            .map_err(|e| format!("launching node {id} ({}): {e}", opts.node_binary.display()))?;
        let stdin = child.stdin.take();
        let mut stdout = child.stdout.take().ok_or("child stdout missing")?;
        let tx = tx.clone();
        thread::spawn(move || loop {
            match read_message(&mut stdout) {
                Ok(Message::Report(r)) => {
                    if tx.send((i, Ok(r))).is_err() {
                        return;
                    }
                }
                Ok(other) => log::warn!("unexpected frame from node {i}: {other:?}"),
                Err(e) => {
                    let _ = tx.send((i, Err(e.to_string())));
                    return;
                }
            }
        });
        fleet.tails.push(LogTail::new(log_path.clone()));
        fleet.nodes.push(NodeProcess { id, child, stdin, log_path });
    }
    Ok(fleet)
}

fn await_addresses(fleet: &mut Fleet, timeout: Duration) -> Result<Vec<String>, String> {
    let deadline = Instant::now() + timeout;
    let mut addrs = vec![None; fleet.nodes.len()];
    while addrs.iter().any(Option::is_none) {
        let wait = deadline.saturating_duration_since(Instant::now());
        match fleet.reports.recv_timeout(wait) {
            Ok((i, Ok(NodeReport::Listening { addr }))) => addrs[i] = Some(addr),
            Ok((i, Ok(NodeReport::Fatal { reason }))) => {
                return Err(format!("node {} failed: {reason}", fleet.nodes[i].id))
            }
            Ok((_, Ok(NodeReport::Status(_)))) => {}
            Ok((i, Err(e))) => return Err(format!("node {} exited before listening: {e}", fleet.nodes[i].id)),
            Err(_) => {
                let missing: Vec<&str> =
                    addrs.iter().zip(&fleet.nodes).filter(|(a, _)| a.is_none()).map(|(_, n)| n.id.as_str()).collect();
                return Err(format!("nodes {missing:?} did not report a listen address in {timeout:?}"));
            }
        }
    }
    Ok(addrs.into_iter().flatten().collect())
}

/// Connects the topology and waits until every node reports exactly its
/// neighbours. A peer outside the topology is an error.
fn wire_up(fleet: &mut Fleet, topology: &TopologySpec, addrs: &[String], timeout: Duration) -> Result<(), String> {
    let ids: Vec<String> = fleet.nodes.iter().map(|n| n.id.clone()).collect();
    for &[a, b] in &topology.edges {
        fleet.nodes[a].send(Command::Connect { peer_id: ids[b].clone(), addr: addrs[b].clone() })?;
    }
    let expected: Vec<BTreeSet<String>> =
        topology.adjacency().iter().map(|adj| adj.iter().map(|&j| ids[j].clone()).collect()).collect();
    let deadline = Instant::now() + timeout;
    loop {
        fleet.poll()?;
        let mut complete = true;
        for (i, status) in fleet.latest.iter().enumerate() {
            let Some(status) = status else {
                complete = false;
                continue;
            };
            let peers: BTreeSet<String> = status.peers.iter().cloned().collect();
            if let Some(stray) = peers.difference(&expected[i]).next() {
                return Err(format!("node {} connected to {stray}, which is not a neighbour", ids[i]));
            }
            complete &= peers == expected[i];
        }
        if complete {
            return Ok(());
        }
        if Instant::now() >= deadline {
            return Err(format!("topology not fully connected after {timeout:?}"));
        }
    }
}

fn stop_reached(stop: StopCondition, fleet: &Fleet, elapsed: Duration) -> bool {
    match stop {
        StopCondition::Height(h) => fleet.latest.iter().flatten().any(|s| s.head_number >= h),
        StopCondition::DurationMs(ms) => elapsed.as_millis() as u64 >= ms,
    }
}

/// Mining has stopped; wait for heads to stop moving so in-flight blocks
/// land before shutdown.
fn quiesce(fleet: &mut Fleet, opts: &ProcessOptions) -> Result<(), String> {
    let cap = Instant::now() + opts.quiesce_cap;
    let mut heads = fleet.heads();
    let mut since = Instant::now();
    while since.elapsed() < opts.quiet_period {
        if Instant::now() >= cap {
            log::warn!("heads still moving after {:?}; shutting down anyway", opts.quiesce_cap);
            return Ok(());
        }
        fleet.poll()?;
        let now = fleet.heads();
        if now != heads {
            heads = now;
            since = Instant::now();
        }
    }
    Ok(())
}

fn drive(
    fleet: &mut Fleet,
    config: &ExperimentConfig,
    opts: &ProcessOptions,
    observer: &mut dyn Observer,
) -> Result<bool, String> {
    let topology = config.topology.clone().normalized().map_err(|e| e.to_string())?;
    let addrs = await_addresses(fleet, opts.launch_timeout)?;
    wire_up(fleet, &topology, &addrs, opts.wiring_timeout)?;
    fleet.broadcast(Command::StartMining)?;
    let start = Instant::now();
    loop {
        if observer.stop_requested() {
            let _ = fleet.broadcast(Command::StopMining);
            return Ok(true);
        }
        fleet.poll()?;
        let tiles = fleet.tiles();
        observer.publish(start.elapsed().as_millis() as u64, tiles);
        if stop_reached(config.stop, fleet, start.elapsed()) {
            break;
        }
    }
    fleet.broadcast(Command::StopMining)?;
    quiesce(fleet, opts)?;
    let tiles = fleet.tiles();
    observer.publish(start.elapsed().as_millis() as u64, tiles);
    Ok(false)
}

/// Runs `config` with one OS process per node. Whatever happens, every child
/// is shut down (or killed) and its log collected.
pub fn run_multiprocess(
    run_id: &str,
    config: &ExperimentConfig,
    opts: &ProcessOptions,
    observer: &mut dyn Observer,
) -> Outcome {
    let epoch_ms = now_ms();
    let mut fleet = match launch(config, opts, epoch_ms) {
        Ok(fleet) => fleet,
        Err(e) => return Outcome { error: Some(e), ..Outcome::default() },
    };
    log::info!("{run_id}: {} node processes, logs in {}", config.n, opts.work_dir.display());
    let driven = drive(&mut fleet, config, opts, observer);
    let (logs, log_error) = fleet.shutdown();
    drop(fleet);
    if opts.remove_work_dir {
        let _ = fs::remove_dir_all(&opts.work_dir);
    }
    match driven {
        Ok(aborted) => Outcome { logs, aborted, error: log_error, settle_rounds: 0 },
        Err(e) => Outcome { logs, aborted: false, error: Some(e), settle_rounds: 0 },
    }
}
