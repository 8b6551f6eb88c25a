//! Line-delimited JSON event logs.
//!
//! A log file starts with one header record naming the schema, the node and
//! the genesis block; every following line is one [`NodeEvent`].

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{Block, ChainError, ChainStore, Hash32};
use crate::node::{EventKind, NodeEvent};

pub const SCHEMA: &str = "chainbox.events/1";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("missing header record")]
    MissingHeader,
    #[error("unsupported schema {0:?}")]
    Schema(String),
    #[error("line {line}: record belongs to node {found}, log is for {expected}")]
    ForeignRecord { line: usize, expected: String, found: String },
    #[error("replay failed: {0}")]
    Replay(#[from] ChainError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    schema: String,
    node_id: String,
    genesis: Block,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventLog {
    pub node_id: String,
    pub genesis: Block,
    pub events: Vec<NodeEvent>,
}

impl EventLog {
    pub fn new(node_id: impl Into<String>, genesis: Block) -> Self {
        EventLog { node_id: node_id.into(), genesis, events: Vec::new() }
    }

    pub fn push(&mut self, event: NodeEvent) {
        self.events.push(event);
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header =
            Header { schema: SCHEMA.to_string(), node_id: self.node_id.clone(), genesis: self.genesis.clone() };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for event in &self.events {
            serde_json::to_writer(&mut w, event)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, LogError> {
        let mut lines = r.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(l) if l.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let (line, first) = lines.next().ok_or(LogError::MissingHeader)?;
        let header: Header = serde_json::from_str(&first?).map_err(|source| LogError::Parse { line, source })?;
        if header.schema != SCHEMA {
            return Err(LogError::Schema(header.schema));
        }
        let mut log = EventLog::new(header.node_id, header.genesis);
        for (line, text) in lines {
            let event: NodeEvent = serde_json::from_str(&text?).map_err(|source| LogError::Parse { line, source })?;
            if event.node_id != log.node_id {
                return Err(LogError::ForeignRecord { line, expected: log.node_id, found: event.node_id });
            }
            log.events.push(event);
        }
        Ok(log)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, LogError> {
        Self::read_from(text.as_bytes())
    }

    pub fn write_file(&self, path: &Path) -> Result<(), LogError> {
        let mut w = io::BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, LogError> {
        Self::read_from(BufReader::new(fs::File::open(path)?))
    }

    /// Head after the last HeadChanged record, or genesis.
    pub fn final_head(&self) -> Hash32 {
        self.events
            .iter()
            .rev()
            .find_map(|e| match e.kind {
                EventKind::HeadChanged { new_hash, .. } => Some(new_hash),
                _ => None,
            })
            .unwrap_or(self.genesis.hash)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.events.iter().filter_map(|e| e.kind.block())
    }

    /// Re-inserts every logged block, in log order, into a fresh store.
    pub fn replay(&self) -> Result<ChainStore, LogError> {
        let mut store = ChainStore::with_genesis(self.genesis.clone())?;
        for block in self.blocks() {
            store.insert(block.clone())?;
        }
        Ok(store)
    }
}

/// Appends records to a log as they happen, for processes that must leave
/// a readable log even if they die mid-run.
pub struct LogWriter<W: Write> {
    inner: W,
}

impl<W: Write> LogWriter<W> {
    /// Writes the header record.
    pub fn new(mut inner: W, node_id: &str, genesis: &Block) -> io::Result<Self> {
        let header = Header { schema: SCHEMA.to_string(), node_id: node_id.to_string(), genesis: genesis.clone() };
        serde_json::to_writer(&mut inner, &header)?;
        inner.write_all(b"\n")?;
        Ok(LogWriter { inner })
    }

    pub fn append(&mut self, event: &NodeEvent) -> io::Result<()> {
        serde_json::to_writer(&mut self.inner, event)?;
        self.inner.write_all(b"\n")
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Parses one event line; the header line yields `None`.
pub fn parse_line(line: &str) -> Result<Option<NodeEvent>, serde_json::Error> {
    if line.starts_with("{\"schema\"") {
        return Ok(None);
    }
    serde_json::from_str(line).map(Some)
}
