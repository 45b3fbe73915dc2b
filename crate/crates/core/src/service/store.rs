//! Mutable records: accounts, meters and reading metadata. Readings themselves are
//! on the chain; the store keeps what the chain does not carry.

use crate::ledger::Geo;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("`{0}` already exists")]
    Conflict(String),
    #[error("store I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("store log is corrupt at line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerAccount {
    pub customer_id: String,
    pub name: String,
    #[serde(default)]
    pub address: String,
    #[serde(default)]
    pub contact: String,
    #[serde(default)]
    pub auth_token_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterRecord {
    pub meter_id: String,
    pub customer_id: String,
    pub register_length: usize,
    pub max_delta: u64,
    pub initial_reading: String,
    pub geo: Geo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadingSource {
    Scanned,
    ManualOverride,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingRecord {
    pub tx_id: String,
    pub meter_id: String,
    pub customer_id: String,
    pub reading: String,
    pub timestamp_ms: u64,
    pub image_digest: String,
    pub geo: Geo,
    pub source: ReadingSource,
    /// Set once the transaction is in a block.
    pub ledger_height: Option<u64>,
    #[serde(default)]
    pub seq: u64,
}

impl ReadingRecord {
    pub fn is_committed(&self) -> bool {
        self.ledger_height.is_some()
    }
}

pub trait ReadingStore: Send + Sync {
    fn insert_customer(&self, c: CustomerAccount) -> Result<(), StoreError>;
    fn customer(&self, id: &str) -> Option<CustomerAccount>;
    fn customers(&self) -> Vec<CustomerAccount>;
    fn insert_meter(&self, m: MeterRecord) -> Result<(), StoreError>;
    fn meter(&self, id: &str) -> Option<MeterRecord>;
    fn meters(&self) -> Vec<MeterRecord>;
    /// Inserts or replaces by `tx_id`. New records get the next sequence number.
    fn put_reading(&self, r: ReadingRecord) -> Result<ReadingRecord, StoreError>;
    fn remove_reading(&self, tx_id: &str) -> Result<(), StoreError>;
    /// All records in insertion order.
    fn readings(&self) -> Vec<ReadingRecord>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogOp {
    Customer(CustomerAccount),
    Meter(MeterRecord),
    Reading(ReadingRecord),
    RemoveReading { tx_id: String },
}

#[derive(Debug, Default, Clone, PartialEq)]
struct Tables {
    customers: BTreeMap<String, CustomerAccount>,
    meters: BTreeMap<String, MeterRecord>,
    readings: BTreeMap<String, ReadingRecord>,
    next_seq: u64,
}

impl Tables {
    fn apply(&mut self, op: LogOp) -> Result<Option<ReadingRecord>, StoreError> {
        match op {
            LogOp::Customer(c) => {
                if self.customers.contains_key(&c.customer_id) {
                    return Err(StoreError::Conflict(c.customer_id));
                }
                self.customers.insert(c.customer_id.clone(), c);
            }
            LogOp::Meter(m) => {
                if self.meters.contains_key(&m.meter_id) {
                    return Err(StoreError::Conflict(m.meter_id));
                }
                self.meters.insert(m.meter_id.clone(), m);
            }
            LogOp::Reading(mut r) => {
                r.seq = match self.readings.get(&r.tx_id) {
                    Some(old) => old.seq,
                    None if r.seq > 0 => r.seq,
                    None => self.next_seq + 1,
                };
                self.next_seq = self.next_seq.max(r.seq);
                self.readings.insert(r.tx_id.clone(), r.clone());
                return Ok(Some(r));
            }
            LogOp::RemoveReading { tx_id } => {
                self.readings.remove(&tx_id);
            }
        }
        Ok(None)
    }

    fn check(&self, op: &LogOp) -> Result<(), StoreError> {
        match op {
            LogOp::Customer(c) if self.customers.contains_key(&c.customer_id) => Err(StoreError::Conflict(c.customer_id.clone())),
            LogOp::Meter(m) if self.meters.contains_key(&m.meter_id) => Err(StoreError::Conflict(m.meter_id.clone())),
            _ => Ok(()),
        }
    }

    fn readings(&self) -> Vec<ReadingRecord> {
        let mut out: Vec<ReadingRecord> = self.readings.values().cloned().collect();
        out.sort_by_key(|r| r.seq);
        out
    }

    fn snapshot(&self) -> Vec<LogOp> {
        let mut ops: Vec<LogOp> = self.customers.values().cloned().map(LogOp::Customer).collect();
        ops.extend(self.meters.values().cloned().map(LogOp::Meter));
        ops.extend(self.readings().into_iter().map(LogOp::Reading));
        ops
    }
}

/// Volatile store for tests and demos.
#[derive(Debug, Default)]
pub struct MemoryStore {
    tables: Mutex<Tables>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn op(&self, op: LogOp) -> Result<Option<ReadingRecord>, StoreError> {
        self.tables.lock().expect("store lock").apply(op)
    }
}

macro_rules! store_impls {
    () => {
        fn customer(&self, id: &str) -> Option<CustomerAccount> {
            self.read(|t| t.customers.get(id).cloned())
        }
        fn customers(&self) -> Vec<CustomerAccount> {
            self.read(|t| t.customers.values().cloned().collect())
        }
        fn meter(&self, id: &str) -> Option<MeterRecord> {
            self.read(|t| t.meters.get(id).cloned())
        }
        fn meters(&self) -> Vec<MeterRecord> {
            self.read(|t| t.meters.values().cloned().collect())
        }
        fn readings(&self) -> Vec<ReadingRecord> {
            self.read(|t| t.readings())
        }
        fn insert_customer(&self, c: CustomerAccount) -> Result<(), StoreError> {
            self.op(LogOp::Customer(c)).map(|_| ())
        }
        fn insert_meter(&self, m: MeterRecord) -> Result<(), StoreError> {
            self.op(LogOp::Meter(m)).map(|_| ())
        }
        fn put_reading(&self, r: ReadingRecord) -> Result<ReadingRecord, StoreError> {
            Ok(self.op(LogOp::Reading(r))?.expect("reading op returns the record"))
        }
        fn remove_reading(&self, tx_id: &str) -> Result<(), StoreError> {
            self.op(LogOp::RemoveReading { tx_id: tx_id.to_string() }).map(|_| ())
        }
    };
}

impl MemoryStore {
    fn read<R>(&self, f: impl FnOnce(&Tables) -> R) -> R {
        f(&self.tables.lock().expect("store lock"))
    }
}

impl ReadingStore for MemoryStore {
    store_impls!();
}

struct FileInner {
    tables: Tables,
    file: File,
    log_lines: usize,
}

/// Single-file JSON-lines append log, rewritten as a snapshot once it grows to
/// several times the live record count.
pub struct FileStore {
    path: PathBuf,
    inner: Mutex<FileInner>,
    compact_factor: usize,
}

impl std::fmt::Debug for FileStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FileStore").field("path", &self.path).finish()
    }
}

const COMPACT_MIN_LINES: usize = 256;

impl FileStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut tables = Tables::default();
        let mut log_lines = 0;
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
            let last = lines.len();
            for (i, line) in lines.into_iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<LogOp>(&line) {
                    Ok(op) => {
                        tables.apply(op).map_err(|e| StoreError::Corrupt { line: i + 1, message: e.to_string() })?;
                        log_lines += 1;
                    }
                    // A torn final line is what an interrupted append leaves behind.
                    Err(_) if i + 1 == last => log::warn!("{}: dropping torn final line", path.display()),
                    Err(e) => return Err(StoreError::Corrupt { line: i + 1, message: e.to_string() }),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let store = Self { path, inner: Mutex::new(FileInner { tables, file, log_lines }), compact_factor: 4 };
        store.compact()?;
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn read<R>(&self, f: impl FnOnce(&Tables) -> R) -> R {
        f(&self.inner.lock().expect("store lock").tables)
    }

    fn op(&self, op: LogOp) -> Result<Option<ReadingRecord>, StoreError> {
        let mut inner = self.inner.lock().expect("store lock");
        inner.tables.check(&op)?;
        let mut written = op.clone();
        let out = inner.tables.apply(op)?;
        if let (LogOp::Reading(r), Some(applied)) = (&mut written, &out) {
            r.seq = applied.seq;
        }
        let mut line = serde_json::to_vec(&written).expect("log op serializes");
        line.push(b'\n');
        inner.file.write_all(&line)?;
        inner.file.sync_data()?;
        inner.log_lines += 1;
        let live = inner.tables.customers.len() + inner.tables.meters.len() + inner.tables.readings.len();
        if inner.log_lines > COMPACT_MIN_LINES && inner.log_lines > live * self.compact_factor {
            Self::rewrite(&self.path, &mut inner)?;
        }
        Ok(out)
    }

    /// Rewrites the log as a snapshot of live records.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut inner = self.inner.lock().expect("store lock");
        Self::rewrite(&self.path, &mut inner)
    }

    fn rewrite(path: &Path, inner: &mut FileInner) -> Result<(), StoreError> {
        let tmp = path.with_extension("compact");
        let ops = inner.tables.snapshot();
        {
            let mut f = File::create(&tmp)?;
            for op in &ops {
                let mut line = serde_json::to_vec(op).expect("log op serializes");
                line.push(b'\n');
                f.write_all(&line)?;
            }
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        inner.file = OpenOptions::new().append(true).open(path)?;
        inner.log_lines = ops.len();
        Ok(())
    }
}

impl ReadingStore for FileStore {
    store_impls!();
}
