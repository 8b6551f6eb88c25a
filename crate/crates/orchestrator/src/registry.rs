//! Run lifecycle: create, start, stop, status and export, serialized per run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{SystemTime, UNIX_EPOCH};

use chainbox_core::eventlog::EventLog;
use chainbox_core::node::{Node, NodeParams};
use chainbox_core::{ExactMetrics, ExperimentConfig, RunMode};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::watch;

use crate::archive;
use crate::snapshot::{RunStatus, StatusSnapshot, Tile};
use crate::{multiproc, simrun};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("run {0} not found")]
    NotFound(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error(transparent)]
    Archive(#[from] archive::ArchiveError),
}

/// How a run is executed, beyond what its config says.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Simulated runs only: simulated seconds per wall-clock second. Absent
    /// means as fast as possible.
    #[serde(default)]
    pub pace: Option<f64>,
    /// Multi-process runs only: the executable started for each node
    /// (defaults to `$CHAINBOX_NODE_BIN`, then the current executable).
    #[serde(default)]
    pub node_binary: Option<PathBuf>,
    /// Multi-process runs only: where node logs are written while running.
    #[serde(default)]
    pub work_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub id: String,
    pub name: String,
    pub mode: String,
    pub status: RunStatus,
    /// Unix milliseconds.
    pub created_at_ms: u64,
    pub started_at_ms: Option<u64>,
    pub stopped_at_ms: Option<u64>,
    /// Run clock at the last snapshot.
    pub elapsed_ms: u64,
    /// Tie-breaking rounds needed after a simulated stop.
    pub settle_rounds: usize,
    pub error: Option<String>,
}

/// Everything known about a run. `metrics` is present iff the run
/// completed.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub summary: RunSummary,
    pub config: ExperimentConfig,
    pub logs: Vec<EventLog>,
    pub metrics: Option<ExactMetrics>,
}

/// What a runtime reports back while running.
pub trait Observer {
    /// Current tiles at run time `elapsed_ms`.
    fn publish(&mut self, elapsed_ms: u64, nodes: Vec<Tile>);
    fn stop_requested(&self) -> bool;
}

/// Result of driving a run to its end.
#[derive(Debug, Default)]
pub struct Outcome {
    pub logs: Vec<EventLog>,
    /// Stopped on request rather than by the stop condition.
    pub aborted: bool,
    pub error: Option<String>,
    pub settle_rounds: usize,
}

struct Run {
    id: String,
    config: ExperimentConfig,
    options: RunOptions,
    record: Mutex<RunRecord>,
    finished: Condvar,
    snapshots: watch::Sender<StatusSnapshot>,
    stop: AtomicBool,
}

impl Run {
    fn lock(&self) -> MutexGuard<'_, RunRecord> {
        self.record.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn publish(&self, elapsed_ms: u64, status: RunStatus, nodes: Option<Vec<Tile>>) {
        self.snapshots.send_modify(|s| {
            let nodes = nodes.unwrap_or_else(|| s.nodes.clone());
            *s = StatusSnapshot::new(&self.id, s.seq + 1, elapsed_ms, status, nodes);
        });
    }
}

struct RunObserver {
    run: Arc<Run>,
}

impl Observer for RunObserver {
    fn publish(&mut self, elapsed_ms: u64, nodes: Vec<Tile>) {
        self.run.lock().summary.elapsed_ms = elapsed_ms;
        self.run.publish(elapsed_ms, RunStatus::Running, Some(nodes));
    }

    fn stop_requested(&self) -> bool {
        self.run.stop.load(Ordering::SeqCst)
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Tiles for every node sitting at genesis.
pub fn genesis_tiles(config: &ExperimentConfig) -> Vec<Tile> {
    config
        .node_ids()
        .into_iter()
        .filter_map(|id| Node::new(NodeParams::new(id, config.genesis.clone(), 0)).ok())
        .map(|node| Tile { status: node.status(), reorg_depth: 0 })
        .collect()
}

fn mode_name(mode: &RunMode) -> &'static str {
    match mode {
        RunMode::Multiprocess => "multiprocess",
        RunMode::Simulated { .. } => "simulated",
    }
}

#[derive(Default)]
pub struct RunRegistry {
    runs: Mutex<BTreeMap<String, Arc<Run>>>,
    next_id: AtomicU64,
}

impl RunRegistry {
    pub fn new() -> Arc<Self> {
        Arc::new(RunRegistry::default())
    }

    fn get(&self, id: &str) -> Result<Arc<Run>, RunError> {
        let runs = self.runs.lock().unwrap_or_else(|e| e.into_inner());
        runs.get(id).cloned().ok_or_else(|| RunError::NotFound(id.to_string()))
    }

    /// Registers a run after validating its config. Invalid topologies are
    /// rejected here, before anything is launched.
    pub fn create(&self, config: ExperimentConfig, options: RunOptions) -> Result<String, RunError> {
        config.validate().map_err(|e| RunError::Invalid(e.to_string()))?;
        if let Some(p) = options.pace {
            if !(p.is_finite() && p > 0.0) {
                return Err(RunError::Invalid("pace must be positive".into()));
            }
        }
        let id = format!("run-{}", self.next_id.fetch_add(1, Ordering::SeqCst) + 1);
        let summary = RunSummary {
            id: id.clone(),
            name: config.name.clone(),
            mode: mode_name(&config.mode).to_string(),
            status: RunStatus::Created,
            created_at_ms: now_ms(),
            started_at_ms: None,
            stopped_at_ms: None,
            elapsed_ms: 0,
            settle_rounds: 0,
            error: None,
        };
        let first = StatusSnapshot::new(&id, 0, 0, RunStatus::Created, genesis_tiles(&config));
        let (snapshots, _) = watch::channel(first);
        let run = Arc::new(Run {
            id: id.clone(),
            record: Mutex::new(RunRecord { summary, config: config.clone(), logs: Vec::new(), metrics: None }),
            config,
            options,
            finished: Condvar::new(),
            snapshots,
            stop: AtomicBool::new(false),
        });
        self.runs.lock().unwrap_or_else(|e| e.into_inner()).insert(id.clone(), run);
        Ok(id)
    }

    /// Launches a created run on its own thread.
    pub fn start(&self, id: &str) -> Result<RunSummary, RunError> {
        let run = self.get(id)?;
        {
            let mut record = run.lock();
            if record.summary.status != RunStatus::Created {
                return Err(RunError::Conflict(format!("run {id} is {}", record.summary.status)));
            }
            record.summary.status = RunStatus::Running;
            record.summary.started_at_ms = Some(now_ms());
        }
        run.publish(0, RunStatus::Running, None);
        let worker = Arc::clone(&run);
        thread::Builder::new()
            .name(id.to_string())
            .spawn(move || {
                let mut observer = RunObserver { run: Arc::clone(&worker) };
                let outcome = match &worker.config.mode {
                    RunMode::Simulated { .. } => {
                        simrun::run_simulated(&worker.config, worker.options.pace, &mut observer)
                    }
                    RunMode::Multiprocess => multiproc::run_multiprocess(
                        &worker.id,
                        &worker.config,
                        &multiproc::ProcessOptions::resolve(&worker.options, &worker.id),
                        &mut observer,
                    ),
                };
                finish(&worker, outcome);
            })
            .map_err(|e| RunError::Conflict(format!("cannot spawn run thread: {e}")))?;
        let summary = run.lock().summary.clone();
        Ok(summary)
    }

    /// Creates and starts a run.
    pub fn start_run(&self, config: ExperimentConfig, options: RunOptions) -> Result<String, RunError> {
        let id = self.create(config, options)?;
        self.start(&id)?;
        Ok(id)
    }

    /// Requests a stop and waits for the run to wind down. The run ends
    /// aborted with whatever logs it produced.
    pub fn stop(&self, id: &str) -> Result<RunSummary, RunError> {
        let run = self.get(id)?;
        {
            let mut record = run.lock();
            if record.summary.status == RunStatus::Created {
                record.summary.status = RunStatus::Aborted;
                record.summary.stopped_at_ms = Some(now_ms());
                let summary = record.summary.clone();
                drop(record);
                run.publish(0, RunStatus::Aborted, None);
                run.finished.notify_all();
                return Ok(summary);
            }
        }
        run.stop.store(true, Ordering::SeqCst);
        Ok(wait_terminal(&run))
    }

    /// Blocks until the run completes or aborts.
    pub fn wait(&self, id: &str) -> Result<RunSummary, RunError> {
        let run = self.get(id)?;
        if run.lock().summary.status == RunStatus::Created {
            return Err(RunError::Conflict(format!("run {id} was never started")));
        }
        Ok(wait_terminal(&run))
    }

    pub fn status(&self, id: &str) -> Result<StatusSnapshot, RunError> {
        Ok(self.get(id)?.snapshots.borrow().clone())
    }

    pub fn subscribe(&self, id: &str) -> Result<watch::Receiver<StatusSnapshot>, RunError> {
        Ok(self.get(id)?.snapshots.subscribe())
    }

    pub fn summary(&self, id: &str) -> Result<RunSummary, RunError> {
        Ok(self.get(id)?.lock().summary.clone())
    }

    pub fn list(&self) -> Vec<RunSummary> {
        let runs: Vec<Arc<Run>> = self.runs.lock().unwrap_or_else(|e| e.into_inner()).values().cloned().collect();
        runs.iter().map(|r| r.lock().summary.clone()).collect()
    }

    pub fn record(&self, id: &str) -> Result<RunRecord, RunError> {
        Ok(self.get(id)?.lock().clone())
    }

    /// Metrics of a completed run; `Ok(None)` while running or if aborted.
    pub fn metrics(&self, id: &str) -> Result<Option<ExactMetrics>, RunError> {
        Ok(self.get(id)?.lock().metrics.clone())
    }

    /// Writes the run's archive into `dir`. Only finished runs export.
    pub fn export(&self, id: &str, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
        let record = self.record(id)?;
        if !record.summary.status.is_terminal() {
            return Err(RunError::Conflict(format!("run {id} is {}", record.summary.status)));
        }
        Ok(archive::export(&record, dir)?)
    }
}

fn wait_terminal(run: &Run) -> RunSummary {
    let mut record = run.lock();
    while !record.summary.status.is_terminal() {
        record = run.finished.wait(record).unwrap_or_else(|e| e.into_inner());
    }
    record.summary.clone()
}

fn finish(run: &Run, outcome: Outcome) {
    let mut record = run.lock();
    record.logs = outcome.logs;
    record.summary.settle_rounds = outcome.settle_rounds;
    record.summary.stopped_at_ms = Some(now_ms());
    record.summary.error = outcome.error.clone();
    record.summary.status = if outcome.aborted || outcome.error.is_some() {
        RunStatus::Aborted
    } else {
        match ExactMetrics::compute(&record.logs, &run.config.node_ids()) {
            Ok(m) => {
                record.metrics = Some(m);
                RunStatus::Completed
            }
            Err(e) => {
                record.summary.error = Some(format!("metrics: {e}"));
                RunStatus::Aborted
            }
        }
    };
    if let Some(e) = &record.summary.error {
        log::warn!("{}: {e}", run.id);
    }
    let (status, elapsed) = (record.summary.status, record.summary.elapsed_ms);
    drop(record);
    run.publish(elapsed, status, None);
    run.finished.notify_all();
}
