use super::{check_shape, Label, Oracle, OracleError, WhiteBox};
use crate::transforms::{Image, Shape};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

/// One line of a cache or playback log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    /// Hex SHA-256 of the query's tensor encoding.
    pub hash: String,
    pub label: usize,
}

pub(crate) fn parse_hash(hex_str: &str) -> Option<[u8; 32]> {
    let bytes = hex::decode(hex_str).ok()?;
    bytes.try_into().ok()
}

pub(crate) fn read_log(path: &Path) -> Result<HashMap<[u8; 32], Label>, OracleError> {
    let file = File::open(path)?;
    let mut map = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: LogEntry = serde_json::from_str(&line).map_err(|e| {
            OracleError::Config(format!("{}:{}: bad log entry: {e}", path.display(), lineno + 1))
        })?;
        let key = parse_hash(&entry.hash).ok_or_else(|| {
            OracleError::Config(format!("{}:{}: hash is not 64 hex digits", path.display(), lineno + 1))
        })?;
        // append-only: the first answer recorded for a key wins
        map.entry(key).or_insert(Label(entry.label));
    }
    Ok(map)
}

/// Content-addressed memo in front of any oracle, optionally persisted as an
/// append-only JSON-lines file. The file format is the playback format, so a
/// finished cache can be replayed with [`super::PlaybackOracle`].
pub struct QueryCache {
    inner: Box<dyn Oracle>,
    entries: RwLock<HashMap<[u8; 32], Label>>,
    log: Option<Mutex<File>>,
    queries: AtomicU64,
    remote_calls: AtomicU64,
}

impl QueryCache {
    pub fn in_memory(inner: Box<dyn Oracle>) -> Self {
        Self {
            inner,
            entries: RwLock::new(HashMap::new()),
            log: None,
            queries: AtomicU64::new(0),
            remote_calls: AtomicU64::new(0),
        }
    }

    /// Loads `path` if it exists and appends new answers to it.
    pub fn persistent(inner: Box<dyn Oracle>, path: &Path) -> Result<Self, OracleError> {
        let entries = if path.exists() { read_log(path)? } else { HashMap::new() };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner,
            entries: RwLock::new(entries),
            log: Some(Mutex::new(file)),
            queries: AtomicU64::new(0),
            remote_calls: AtomicU64::new(0),
        })
    }

    /// Logical `top1` calls answered, hits and misses alike.
    pub fn queries(&self) -> u64 {
        self.queries.load(Ordering::SeqCst)
    }

    /// Calls forwarded to the wrapped oracle.
    pub fn remote_calls(&self) -> u64 {
        self.remote_calls.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inner(&self) -> &dyn Oracle {
        self.inner.as_ref()
    }
}

impl Oracle for QueryCache {
    fn top1(&self, img: &Image) -> Result<Label, OracleError> {
        check_shape(self.inner.input_shape(), img)?;
        self.queries.fetch_add(1, Ordering::SeqCst);
        let key = img.content_hash();
        if let Some(&label) = self.entries.read().unwrap().get(&key) {
            return Ok(label);
        }
        self.remote_calls.fetch_add(1, Ordering::SeqCst);
        let label = self.inner.top1(img)?;
        let mut entries = self.entries.write().unwrap();
        if let Some(&existing) = entries.get(&key) {
            // a concurrent miss on the same key already recorded an answer
            return Ok(existing);
        }
        entries.insert(key, label);
        if let Some(log) = &self.log {
            let line = serde_json::to_string(&LogEntry {
                hash: hex::encode(key),
                label: label.0,
            })
            .expect("log entry serializes");
            let mut f = log.lock().unwrap();
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        Ok(label)
    }

    fn input_shape(&self) -> Option<Shape> {
        self.inner.input_shape()
    }

    fn num_classes(&self) -> Option<usize> {
        self.inner.num_classes()
    }

    fn white_box(&self) -> Option<&dyn WhiteBox> {
        self.inner.white_box()
    }
}
