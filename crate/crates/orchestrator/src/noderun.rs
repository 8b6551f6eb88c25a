//! The node process of a multi-process run.
//!
//! Control traffic uses the framed wire format over the process's stdin
//! (`Command`) and stdout (`Report`); peers connect over TCP. Events are
//! appended to the log file as they happen, so a crashed node still leaves a
//! readable log.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use chainbox_core::chain::GenesisConfig;
use chainbox_core::eventlog::LogWriter;
use chainbox_core::node::{NodeError, NodeParams, Outbound};
use chainbox_core::wire::tcp::{self, PeerHandle, DEFAULT_CONNECT_TIMEOUT};
use chainbox_core::wire::{read_message, write_message, Command, Message, NodeReport, Status, WireError};
use chainbox_core::Node;

pub const DIAL_BACKOFF_START: Duration = Duration::from_secs(1);
pub const DIAL_BACKOFF_CAP: Duration = Duration::from_secs(30);

/// Attempts per mining slice when the hashrate is unlimited.
const UNLIMITED_SLICE: u64 = 2048;

#[derive(Clone, Debug)]
pub struct NodeArgs {
    pub node_id: String,
    pub genesis: GenesisConfig,
    pub seed: u64,
    /// Attempts per second; `None` mines flat out.
    pub hashrate: Option<f64>,
    pub listen: String,
    pub log_path: PathBuf,
    /// Unix milliseconds the run clock counts from.
    pub epoch_ms: u64,
}

/// Retry delays for an unreachable peer: 1 s, doubling, capped at 30 s.
pub fn backoff_delays() -> impl Iterator<Item = Duration> {
    std::iter::successors(Some(DIAL_BACKOFF_START), |d| Some((*d * 2).min(DIAL_BACKOFF_CAP)))
}

enum Inbound {
    Command(Command),
    ControlClosed,
    Connected(PeerHandle),
    Frame { peer: String, conn: u64, message: Message },
    Closed { peer: String, conn: u64 },
    Fatal(String),
}

struct Peer {
    conn: u64,
    handle: PeerHandle,
}

struct RunClock {
    epoch_us: u64,
}

impl RunClock {
    fn now_us(&self) -> u64 {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_micros() as u64).unwrap_or(0);
        now.saturating_sub(self.epoch_us)
    }
}

struct Runtime<W: Write> {
    node: Node,
    peers: BTreeMap<String, Peer>,
    next_conn: u64,
    tx: Sender<Inbound>,
    control_out: W,
    local_status: Arc<Mutex<Status>>,
    stopping: Arc<AtomicBool>,
    clock: RunClock,
}

impl<W: Write> Runtime<W> {
    fn report(&mut self, report: NodeReport) -> anyhow::Result<()> {
        write_message(&mut self.control_out, &Message::Report(report))?;
        self.control_out.flush()?;
        Ok(())
    }

    fn send_all(&mut self, mut out: Vec<Outbound>) {
        while !out.is_empty() {
            let mut dead = Vec::new();
            for o in out.drain(..) {
                if let Some(peer) = self.peers.get_mut(&o.to) {
                    if let Err(e) = peer.handle.send(&o.message) {
                        log::warn!("{}: send to {} failed: {e}", self.node.id(), o.to);
                        dead.push(o.to);
                    }
                }
            }
            for peer in dead {
                if let Some(p) = self.peers.remove(&peer) {
                    p.handle.close();
                    out.extend(self.node.peer_disconnected(&peer, self.clock.now_us()));
                }
            }
        }
    }

    fn dial(&self, peer_id: String, addr: String) {
        let local_id = self.node.id().to_string();
        let status = Arc::clone(&self.local_status);
        let tx = self.tx.clone();
        let stopping = Arc::clone(&self.stopping);
        thread::spawn(move || {
            let mut delays = backoff_delays();
            while !stopping.load(Ordering::SeqCst) {
                let local = status.lock().unwrap_or_else(|e| e.into_inner()).clone();
                match tcp::connect(&local_id, &local, &addr, DEFAULT_CONNECT_TIMEOUT) {
                    Ok(handle) => {
                        if handle.peer_id != peer_id {
                            log::warn!("{local_id}: {addr} answered as {}, expected {peer_id}", handle.peer_id);
                        }
                        let _ = tx.send(Inbound::Connected(handle));
                        return;
                    }
                    Err(WireError::IncompatiblePeer(reason)) => {
                        let _ = tx.send(Inbound::Fatal(format!("peer {peer_id}: {reason}")));
                        return;
                    }
                    Err(e) => {
                        let delay = delays.next().unwrap_or(DIAL_BACKOFF_CAP);
                        log::warn!("{local_id}: dialing {peer_id} at {addr} failed ({e}); retrying in {delay:?}");
                        thread::sleep(delay);
                    }
                }
            }
        });
    }

    fn connected(&mut self, handle: PeerHandle) -> anyhow::Result<()> {
        let peer_id = handle.peer_id.clone();
        if let Some(old) = self.peers.remove(&peer_id) {
            old.handle.close();
            let out = self.node.peer_disconnected(&peer_id, self.clock.now_us());
            self.send_all(out);
        }
        self.next_conn += 1;
        let conn = self.next_conn;
        let mut reader = handle.reader()?;
        let tx = self.tx.clone();
        let id = peer_id.clone();
        thread::spawn(move || loop {
            match reader.next_message() {
                Ok(message) => {
                    if tx.send(Inbound::Frame { peer: id.clone(), conn, message }).is_err() {
                        return;
                    }
                }
                Err(e) => {
                    if !matches!(e, WireError::Closed) {
                        log::debug!("connection to {id} ended: {e}");
                    }
                    let _ = tx.send(Inbound::Closed { peer: id, conn });
                    return;
                }
            }
        });
        let remote = handle.remote_status.clone();
        self.peers.insert(peer_id.clone(), Peer { conn, handle });
        match self.node.peer_connected(&peer_id, &remote, self.clock.now_us()) {
            Ok(out) => self.send_all(out),
            Err(NodeError::IncompatiblePeer { peer, reason }) => bail!("peer {peer}: {reason}"),
            Err(e) => return Err(e.into()),
        }
        Ok(())
    }

    /// Returns false once the node should exit.
    fn handle(&mut self, inbound: Inbound) -> anyhow::Result<bool> {
        match inbound {
            Inbound::Command(Command::Connect { peer_id, addr }) => {
                if !self.peers.contains_key(&peer_id) {
                    self.dial(peer_id, addr);
                }
            }
            Inbound::Command(Command::ReportStatus) => {
                let status = self.node.status();
                self.report(NodeReport::Status(status))?;
            }
            Inbound::Command(Command::Shutdown) => {
                self.node.command(&Command::Shutdown);
                return Ok(false);
            }
            Inbound::Command(command) => self.node.command(&command),
            Inbound::ControlClosed => return Ok(false),
            Inbound::Connected(handle) => self.connected(handle)?,
            Inbound::Frame { peer, conn, message } => {
                if self.peers.get(&peer).is_some_and(|p| p.conn == conn) {
                    let out = self.node.handle_message(&peer, message, self.clock.now_us());
                    self.send_all(out);
                }
            }
            Inbound::Closed { peer, conn } => {
                if self.peers.get(&peer).is_some_and(|p| p.conn == conn) {
                    self.peers.remove(&peer);
                    let out = self.node.peer_disconnected(&peer, self.clock.now_us());
                    self.send_all(out);
                }
            }
            Inbound::Fatal(reason) => bail!(reason),
        }
        Ok(true)
    }
}

/// Runs a node until it is told to shut down or its control input closes.
/// A genesis or chain-id mismatch with a peer is reported as `Fatal` and
/// returned as an error.
pub fn run_node<R, W>(args: NodeArgs, control_in: R, control_out: W) -> anyhow::Result<()>
where
    R: Read + Send + 'static,
    W: Write,
{
    let node = Node::new(NodeParams::new(args.node_id.clone(), args.genesis.clone(), args.seed))?;
    let listener = TcpListener::bind(&args.listen).with_context(|| format!("binding {}", args.listen))?;
    let addr = listener.local_addr()?.to_string();
    let file = File::create(&args.log_path).with_context(|| format!("creating {}", args.log_path.display()))?;
    let mut log = LogWriter::new(BufWriter::new(file), &args.node_id, node.genesis())?;
    log.flush()?;

    let (tx, rx) = mpsc::channel();
    let local_status = Arc::new(Mutex::new(node.status_message()));
    let stopping = Arc::new(AtomicBool::new(false));

    {
        let tx = tx.clone();
        let status = Arc::clone(&local_status);
        let id = args.node_id.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let local = status.lock().unwrap_or_else(|e| e.into_inner()).clone();
                match tcp::accept(stream, &id, &local) {
                    Ok(handle) => {
                        if tx.send(Inbound::Connected(handle)).is_err() {
                            return;
                        }
                    }
                    Err(WireError::IncompatiblePeer(reason)) => {
                        let _ = tx.send(Inbound::Fatal(format!("inbound peer: {reason}")));
                    }
                    Err(e) => log::warn!("{id}: inbound handshake failed: {e}"),
                }
            }
        });
    }
    {
        let tx = tx.clone();
        let mut input = control_in;
        thread::spawn(move || loop {
            match read_message(&mut input) {
                Ok(Message::Command(c)) => {
                    if tx.send(Inbound::Command(c)).is_err() {
                        return;
                    }
                }
                Ok(other) => log::warn!("ignoring non-command control frame {other:?}"),
                Err(_) => {
                    let _ = tx.send(Inbound::ControlClosed);
                    return;
                }
            }
        });
    }

    let mut rt = Runtime {
        node,
        peers: BTreeMap::new(),
        next_conn: 0,
        tx,
        control_out,
        local_status,
        stopping: Arc::clone(&stopping),
        clock: RunClock { epoch_us: args.epoch_ms.saturating_mul(1000) },
    };
    rt.report(NodeReport::Listening { addr })?;

    let mut budget = 0.0f64;
    let mut last_slice = Instant::now();
    let result = loop {
        let wait = if rt.node.can_mine() { Duration::from_millis(1) } else { Duration::from_millis(50) };
        let first = match rx.recv_timeout(wait) {
            Ok(m) => Some(m),
            Err(RecvTimeoutError::Timeout) => None,
            Err(RecvTimeoutError::Disconnected) => Some(Inbound::ControlClosed),
        };
        let mut keep_going = Ok(true);
        for inbound in first.into_iter().chain(rx.try_iter()) {
            keep_going = rt.handle(inbound);
            if !matches!(keep_going, Ok(true)) {
                break;
            }
        }

        let elapsed = last_slice.elapsed();
        last_slice = Instant::now();
        if rt.node.can_mine() && matches!(keep_going, Ok(true)) {
            let attempts = match args.hashrate {
                Some(h) => {
                    budget = (budget + h * elapsed.as_secs_f64()).min(h);
                    let n = budget.floor();
                    budget -= n;
                    n as u64
                }
                None => UNLIMITED_SLICE,
            };
            let now = rt.clock.now_us();
            if let Some((block, _)) = rt.node.mine(attempts, now, 0) {
                let out = rt.node.commit_mined(block, rt.clock.now_us());
                rt.send_all(out);
            }
        } else {
            budget = 0.0;
        }

        let events = rt.node.drain_events();
        if !events.is_empty() {
            for e in &events {
                log.append(e)?;
            }
            log.flush()?;
            *rt.local_status.lock().unwrap_or_else(|e| e.into_inner()) = rt.node.status_message();
        }

        match keep_going {
            Ok(true) => {}
            Ok(false) => break Ok(()),
            Err(e) => {
                let _ = rt.report(NodeReport::Fatal { reason: e.to_string() });
                break Err(e);
            }
        }
    };
    stopping.store(true, Ordering::SeqCst);
    for peer in rt.peers.values() {
        peer.handle.close();
    }
    log.flush()?;
    result
}
