//! Versioned record store with an append-only event log.
//!
//! Each record sits behind its own cell. Readers clone the current `Arc`;
//! writers decide against a snapshot and then compare-and-swap on the
//! version, so of two racing mutations built on the same version exactly one
//! is accepted. With a directory attached, every accepted mutation is
//! appended to `events.jsonl` before it becomes visible, and the full record
//! set is written to `snapshot.json` every `snapshot_every` events.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::record::{Command, CrossVerdict, HistoryEntry, Policy, ReviewDecision, ReviewPayload, ReviewRecord, ReviewState};
use crate::{Result, ReviewError};

pub const LOG_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

type Cell = Arc<Mutex<Arc<ReviewRecord>>>;
type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine {
    Created { payload: ReviewPayload },
    Event { record_id: String, entry: HistoryEntry },
}

struct Journal {
    dir: PathBuf,
    log: Mutex<File>,
    since_snapshot: AtomicU64,
    snapshot_every: u64,
}

impl Journal {
    fn append(&self, line: &LogLine) -> Result<()> {
        let mut text = serde_json::to_vec(line).expect("log line serializes");
        text.push(b'\n');
        let path = self.dir.join(LOG_FILE);
        let mut log = self.log.lock().unwrap();
        log.write_all(&text).map_err(|e| ReviewError::io(&path, e))?;
        log.flush().map_err(|e| ReviewError::io(&path, e))
    }
}

/// Result of an idempotent enqueue.
#[derive(Clone, Debug, PartialEq)]
pub enum Enqueued {
    Created(Arc<ReviewRecord>),
    Existing(Arc<ReviewRecord>),
}

impl Enqueued {
    pub fn record(&self) -> &Arc<ReviewRecord> {
        match self {
            Self::Created(r) | Self::Existing(r) => r,
        }
    }
}

pub struct ReviewStore {
    records: RwLock<BTreeMap<String, Cell>>,
    policy: Policy,
    clock: Clock,
    journal: Option<Journal>,
}

impl ReviewStore {
    pub fn in_memory(policy: Policy) -> Self {
        Self {
            records: RwLock::new(BTreeMap::new()),
            policy,
            clock: Arc::new(wall_clock_ms),
            journal: None,
        }
    }

    /// Opens or creates a persistent store, recovering from snapshot plus log.
    pub fn open(dir: &Path, policy: Policy) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| ReviewError::io(dir, e))?;
        let mut records = read_snapshot(&dir.join(SNAPSHOT_FILE))?;
        let log_path = dir.join(LOG_FILE);
        replay_log(&log_path, &mut records)?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| ReviewError::io(&log_path, e))?;
        let cells = records
            .into_iter()
            .map(|(id, r)| (id, Arc::new(Mutex::new(Arc::new(r)))))
            .collect();
        Ok(Self {
            records: RwLock::new(cells),
            policy,
            clock: Arc::new(wall_clock_ms),
            journal: Some(Journal {
                dir: dir.to_path_buf(),
                log: Mutex::new(log),
                since_snapshot: AtomicU64::new(0),
                snapshot_every: 64,
            }),
        })
    }

    /// Replaces the wall clock used for history timestamps.
    pub fn with_clock(mut self, clock: impl Fn() -> u64 + Send + Sync + 'static) -> Self {
        self.clock = Arc::new(clock);
        self
    }

    pub fn with_snapshot_every(mut self, events: u64) -> Self {
        if let Some(j) = &mut self.journal {
            j.snapshot_every = events.max(1);
        }
        self
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn len(&self) -> usize {
        self.records.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cell(&self, id: &str) -> Result<Cell> {
        self.records
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ReviewError::NotFound(id.to_string()))
    }

    pub fn get(&self, id: &str) -> Result<Arc<ReviewRecord>> {
        Ok(self.cell(id)?.lock().unwrap().clone())
    }

    /// Records ordered by id, optionally restricted to one state.
    pub fn list(&self, state: Option<ReviewState>) -> Vec<Arc<ReviewRecord>> {
        let cells: Vec<Cell> = self.records.read().unwrap().values().cloned().collect();
        cells
            .iter()
            .map(|c| c.lock().unwrap().clone())
            .filter(|r| state.is_none_or(|s| r.state == s))
            .collect()
    }

    /// Adds a record in state `generated` unless one with the same id exists.
    pub fn enqueue(&self, payload: ReviewPayload) -> Result<Enqueued> {
        let mut map = self.records.write().unwrap();
        if let Some(cell) = map.get(&payload.sample.sample_id) {
            return Ok(Enqueued::Existing(cell.lock().unwrap().clone()));
        }
        let record = Arc::new(ReviewRecord::new(payload.clone()));
        if let Some(j) = &self.journal {
            j.append(&LogLine::Created { payload })?;
        }
        map.insert(record.record_id.clone(), Arc::new(Mutex::new(record.clone())));
        drop(map);
        self.after_append()?;
        Ok(Enqueued::Created(record))
    }

    pub fn execute(&self, id: &str, actor: &str, cmd: &Command) -> Result<Arc<ReviewRecord>> {
        let cell = self.cell(id)?;
        let seen = cell.lock().unwrap().clone();
        let next = Arc::new(seen.execute(actor, cmd, &self.policy, (self.clock)())?);
        {
            let mut slot = cell.lock().unwrap();
            if slot.version != seen.version {
                return Err(ReviewError::Conflict {
                    record_id: id.to_string(),
                    message: format!("version moved from {} to {} concurrently", seen.version, slot.version),
                });
            }
            if let Some(j) = &self.journal {
                j.append(&LogLine::Event {
                    record_id: id.to_string(),
                    entry: next.history.last().expect("accepted mutation has history").clone(),
                })?;
            }
            *slot = next.clone();
        }
        self.after_append()?;
        Ok(next)
    }

    pub fn claim(&self, id: &str, annotator: &str, expected: Option<u64>) -> Result<Arc<ReviewRecord>> {
        self.execute(id, annotator, &Command::Claim { expected })
    }

    pub fn submit_review(
        &self,
        id: &str,
        annotator: &str,
        decision: ReviewDecision,
        version: u64,
    ) -> Result<Arc<ReviewRecord>> {
        self.execute(id, annotator, &Command::Review { decision, version })
    }

    pub fn cross_check(
        &self,
        id: &str,
        annotator: &str,
        verdict: CrossVerdict,
        version: u64,
    ) -> Result<Arc<ReviewRecord>> {
        self.execute(id, annotator, &Command::CrossCheck { verdict, version })
    }

    fn after_append(&self) -> Result<()> {
        let Some(j) = &self.journal else {
            return Ok(());
        };
        if j.since_snapshot.fetch_add(1, Ordering::SeqCst) + 1 >= j.snapshot_every {
            self.snapshot()?;
        }
        Ok(())
    }

    /// Writes the current record set to `snapshot.json`. No-op in memory.
    pub fn snapshot(&self) -> Result<()> {
        let Some(j) = &self.journal else {
            return Ok(());
        };
        let current = self.list(None);
        let records: Vec<&ReviewRecord> = current.iter().map(|r| &**r).collect();
        let path = j.dir.join(SNAPSHOT_FILE);
        let tmp = j.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let text = serde_json::to_vec(&records).expect("records serialize");
        fs::write(&tmp, text).map_err(|e| ReviewError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| ReviewError::io(&path, e))?;
        j.since_snapshot.store(0, Ordering::SeqCst);
        Ok(())
    }
}

fn wall_clock_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn read_snapshot(path: &Path) -> Result<BTreeMap<String, ReviewRecord>> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
        Err(e) => return Err(ReviewError::io(path, e)),
    };
    let records: Vec<ReviewRecord> = serde_json::from_slice(&bytes).map_err(|e| ReviewError::Corrupt {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    Ok(records.into_iter().map(|r| (r.record_id.clone(), r)).collect())
}

/// Applies log lines newer than the snapshot. A torn final line is dropped.
fn replay_log(path: &Path, records: &mut BTreeMap<String, ReviewRecord>) -> Result<()> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(ReviewError::io(path, e)),
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| ReviewError::io(path, e))?;
    let corrupt = |line: usize, message: String| ReviewError::Corrupt {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (i, text) in lines.iter().enumerate() {
        let parsed: LogLine = match serde_json::from_str(text) {
            Ok(l) => l,
            Err(_) if i + 1 == lines.len() => {
                log::warn!("{}: ignoring torn final line {}", path.display(), i + 1);
                break;
            }
            Err(e) => return Err(corrupt(i + 1, e.to_string())),
        };
        match parsed {
            LogLine::Created { payload } => {
                let id = payload.sample.sample_id.clone();
                records.entry(id).or_insert_with(|| ReviewRecord::new(payload));
            }
            LogLine::Event { record_id, entry } => {
                let record = records
                    .get_mut(&record_id)
                    .ok_or_else(|| corrupt(i + 1, format!("event for unknown record {record_id}")))?;
                if entry.version <= record.version {
                    continue;
                }
                if entry.version != record.version + 1 {
                    return Err(corrupt(
                        i + 1,
                        format!("record {record_id} jumps from version {} to {}", record.version, entry.version),
                    ));
                }
                record.apply(&entry.actor, entry.timestamp_ms, entry.event);
            }
        }
    }
    Ok(())
}
