//! Run archives: a directory holding the config, one event log per node, the
//! metrics of completed runs and a run summary.
//!
//! ```text
//! <dir>/config.toml
//! <dir>/run.json
//! <dir>/logs/<node_id>.jsonl
//! <dir>/metrics.json        (completed runs only)
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chainbox_core::eventlog::{EventLog, LogError};
use chainbox_core::metrics::{MetricsError, MetricsFile};
use chainbox_core::{ExactMetrics, ExperimentConfig};
use thiserror::Error;

use crate::registry::{RunRecord, RunSummary};

pub const CONFIG_FILE: &str = "config.toml";
pub const RUN_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const LOG_DIR: &str = "logs";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Log { path: PathBuf, source: LogError },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, message: impl ToString) -> ArchiveError {
    ArchiveError::Format { path: path.to_path_buf(), message: message.to_string() }
}

pub fn log_path(dir: &Path, node_id: &str) -> PathBuf {
    dir.join(LOG_DIR).join(format!("{node_id}.jsonl"))
}

/// Writes the archive; returns the files written.
pub fn export(record: &RunRecord, dir: &Path) -> Result<Vec<PathBuf>, ArchiveError> {
    let logs_dir = dir.join(LOG_DIR);
    fs::create_dir_all(&logs_dir).map_err(io_err(&logs_dir))?;
    let mut written = Vec::new();

    let config_path = dir.join(CONFIG_FILE);
    let text = toml::to_string(&record.config).map_err(|e| format_err(&config_path, e))?;
    fs::write(&config_path, text).map_err(io_err(&config_path))?;
    written.push(config_path);

    let run_path = dir.join(RUN_FILE);
    let mut text = serde_json::to_string_pretty(&record.summary).map_err(|e| format_err(&run_path, e))?;
    text.push('\n');
    fs::write(&run_path, text).map_err(io_err(&run_path))?;
    written.push(run_path);

    for log in &record.logs {
        let path = log_path(dir, &log.node_id);
        log.write_file(&path).map_err(|source| ArchiveError::Log { path: path.clone(), source })?;
        written.push(path);
    }

    let metrics_path = dir.join(METRICS_FILE);
    match &record.metrics {
        Some(m) => {
            fs::write(&metrics_path, MetricsFile::new(m.clone()).to_json()).map_err(io_err(&metrics_path))?;
            written.push(metrics_path);
        }
        None if metrics_path.exists() => fs::remove_file(&metrics_path).map_err(io_err(&metrics_path))?,
        None => {}
    }
    Ok(written)
}

/// An archive read back from disk.
#[derive(Clone, Debug)]
pub struct Archive {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub summary: Option<RunSummary>,
    /// In node order; nodes without a log file are skipped.
    pub logs: Vec<EventLog>,
    /// The stored metrics file, verbatim.
    pub metrics_json: Option<String>,
}

impl Archive {
    pub fn load(dir: &Path) -> Result<Self, ArchiveError> {
        let config_path = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&config_path).map_err(io_err(&config_path))?;
        let config: ExperimentConfig = toml::from_str(&text).map_err(|e| format_err(&config_path, e))?;

        let run_path = dir.join(RUN_FILE);
        let summary = match fs::read_to_string(&run_path) {
            Ok(text) => Some(serde_json::from_str(&text).map_err(|e| format_err(&run_path, e))?),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(io_err(&run_path)(e)),
        };

        let mut logs = Vec::new();
        for id in config.node_ids() {
            let path = log_path(dir, &id);
            if !path.exists() {
                continue;
            }
            logs.push(EventLog::read_file(&path).map_err(|source| ArchiveError::Log { path, source })?);
        }

        let metrics_path = dir.join(METRICS_FILE);
        let metrics_json = match fs::read_to_string(&metrics_path) {
            Ok(text) => Some(text),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(io_err(&metrics_path)(e)),
        };
        Ok(Archive { dir: dir.to_path_buf(), config, summary, logs, metrics_json })
    }

    pub fn compute_metrics(&self) -> Result<ExactMetrics, ArchiveError> {
        Ok(ExactMetrics::compute(&self.logs, &self.config.node_ids())?)
    }

    /// The metrics file as `export` would write it for these logs.
    pub fn recompute_metrics_json(&self) -> Result<String, ArchiveError> {
        Ok(MetricsFile::new(self.compute_metrics()?).to_json())
    }
}
