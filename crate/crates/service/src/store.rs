//! Durable train store.
//!
//! Layout under the data directory:
//!
//! ```text
//! index.jsonl              one {"train_id","file"} line per train, ingest order
//! trains/<hex id>.jsonl    the train's log: its summary, then corrections
//! ```
//!
//! Every write is flushed to disk before the call returns. On open, a torn
//! final line (a write cut short by a crash) is cut off, and trains whose
//! log exists but never reached the index are added back to it.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use wagonline_core::grammar::{parse, CheckDigitScheme};
use wagonline_core::recognize::{WagonRecord, WagonStatus};
use wagonline_core::summary::{SummaryError, TrainSummary};

pub const MARK_DAMAGED: &str = "mark_damaged";
const INDEX_FILE: &str = "index.jsonl";
const TRAINS_DIR: &str = "trains";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("train {0} not found")]
    NotFound(String),
    #[error("train {train_id} has no wagon at position {position}")]
    PositionNotFound { train_id: String, position: usize },
    #[error("invalid code: {0}")]
    InvalidCode(String),
    #[error("invalid correction: {0}")]
    InvalidRequest(String),
    #[error("train {0} already stored with different content")]
    DuplicateTrainId(String),
    #[error("invalid summary: {0}")]
    InvalidSummary(#[from] SummaryError),
    #[error("{path}: line {line} is corrupt")]
    Corrupt { path: PathBuf, line: usize },
    #[error("storage failure: {0}")]
    StorageFailure(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRecord {
    pub train_id: String,
    pub position: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub old_code: Option<String>,
    pub new_code: String,
    pub operator: String,
    pub reason: String,
    pub at_ms: i64,
}

/// Body of a correction request. Fields the path already names are optional
/// and must agree with it when present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRequest {
    #[serde(default)]
    pub train_id: Option<String>,
    #[serde(default)]
    pub position: Option<usize>,
    #[serde(default)]
    pub old_code: Option<String>,
    #[serde(default)]
    pub new_code: String,
    pub operator: String,
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainListItem {
    pub train_id: String,
    pub started_ms: i64,
    pub wagon_count: usize,
    pub rejection_rate: f64,
    pub unresolved_conflicts: usize,
}

/// A train's current view together with its audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainDetail {
    #[serde(flatten)]
    pub summary: TrainSummary,
    pub corrections: Vec<CorrectionRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ingested {
    Created,
    AlreadyStored,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogEntry {
    Summary { summary: TrainSummary },
    Correction { correction: CorrectionRecord },
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    train_id: String,
    file: String,
}

#[derive(Debug, Clone)]
struct Train {
    file: PathBuf,
    ingested: TrainSummary,
    view: TrainSummary,
    corrections: Vec<CorrectionRecord>,
}

pub struct TrainStore {
    dir: PathBuf,
    scheme: CheckDigitScheme,
    trains: HashMap<String, Train>,
    order: Vec<String>,
}

fn file_name(train_id: &str) -> String {
    format!("{}.jsonl", hex::encode(train_id.as_bytes()))
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}

fn append_line(path: &Path, value: &impl Serialize) -> io::Result<()> {
    let mut line = serde_json::to_vec(value).map_err(io::Error::other)?;
    line.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&line)?;
    f.sync_all()
}

/// Reads a JSONL file, cutting off a torn final line. A bad line anywhere
/// else is corruption.
fn read_log<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, StoreError> {
    let mut file = match OpenOptions::new().read(true).write(true).open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(&mut file);
    let mut entries = Vec::new();
    let mut good_len = 0u64;
    let mut buf = String::new();
    let mut line_no = 0;
    let mut torn = false;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        match serde_json::from_str::<T>(buf.trim_end()) {
            Ok(v) if complete => {
                entries.push(v);
                good_len += n as u64;
            }
            _ if !complete => {
                torn = true;
                break;
            }
            _ if buf.trim().is_empty() => good_len += n as u64,
            _ => {
                // a bad line is only tolerable as the very last one
                let mut rest = String::new();
                if reader.read_line(&mut rest)? == 0 {
                    torn = true;
                    break;
                }
                return Err(StoreError::Corrupt { path: path.into(), line: line_no });
            }
        }
    }
    drop(reader);
    if torn {
        warn!(path = %path.display(), "cutting off torn final line");
        file.set_len(good_len)?;
        file.seek(SeekFrom::End(0))?;
        file.sync_all()?;
    }
    Ok(entries)
}

/// Applies one correction to a view. Returns false when it does not apply.
fn apply_correction(view: &mut TrainSummary, c: &CorrectionRecord, scheme: &CheckDigitScheme) -> bool {
    let Some(wagon) = view.wagons.get_mut(c.position.wrapping_sub(1)) else {
        return false;
    };
    if c.reason == MARK_DAMAGED {
        wagon.maintenance = true;
    } else {
        let Ok(code) = parse(&c.new_code) else { return false };
        if scheme.validate(&code).is_err() {
            return false;
        }
        wagon.code = Some(code);
        wagon.status = WagonStatus::Accepted;
        wagon.reject_reason = None;
        wagon.operator_corrected = true;
    }
    view.refresh_stats();
    true
}

impl TrainStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        let trains_dir = dir.join(TRAINS_DIR);
        fs::create_dir_all(&trains_dir)?;
        let mut store =
            TrainStore { dir, scheme: CheckDigitScheme::default(), trains: HashMap::new(), order: Vec::new() };

        let index: Vec<IndexEntry> = read_log(&store.dir.join(INDEX_FILE))?;
        let mut listed: Vec<String> = Vec::new();
        for entry in index {
            if !listed.contains(&entry.train_id) {
                listed.push(entry.train_id);
            }
        }

        let mut on_disk: Vec<(String, PathBuf)> = Vec::new();
        for entry in fs::read_dir(&trains_dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                on_disk.push((path.file_name().unwrap_or_default().to_string_lossy().into_owned(), path));
            }
        }
        on_disk.sort();

        for (_, path) in on_disk {
            match store.replay(&path)? {
                Some(train) => {
                    let id = train.view.train_id.clone();
                    store.trains.insert(id, train);
                }
                None => {
                    // never acknowledged: the summary line itself was torn
                    warn!(path = %path.display(), "removing train log without a summary");
                    fs::remove_file(&path)?;
                }
            }
        }

        store.order = listed.into_iter().filter(|id| store.trains.contains_key(id)).collect();
        let mut missing: Vec<String> = store.trains.keys().filter(|id| !store.order.contains(id)).cloned().collect();
        missing.sort();
        for id in missing {
            info!(train_id = %id, "restoring index entry");
            append_line(&store.dir.join(INDEX_FILE), &IndexEntry { file: file_name(&id), train_id: id.clone() })?;
            store.order.push(id);
        }
        Ok(store)
    }

    fn replay(&self, path: &Path) -> Result<Option<Train>, StoreError> {
        let mut entries = read_log::<LogEntry>(path)?.into_iter();
        let Some(LogEntry::Summary { summary }) = entries.next() else {
            return Ok(None);
        };
        let mut train =
            Train { file: path.to_path_buf(), view: summary.clone(), ingested: summary, corrections: Vec::new() };
        for entry in entries {
            if let LogEntry::Correction { correction } = entry {
                apply_correction(&mut train.view, &correction, &self.scheme);
                train.corrections.push(correction);
            }
        }
        Ok(Some(train))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn ingest(&mut self, summary: TrainSummary) -> Result<Ingested, StoreError> {
        summary.validate(&self.scheme)?;
        if let Some(existing) = self.trains.get(&summary.train_id) {
            let same = serde_json::to_value(&existing.ingested).ok() == serde_json::to_value(&summary).ok();
            return if same {
                Ok(Ingested::AlreadyStored)
            } else {
                Err(StoreError::DuplicateTrainId(summary.train_id))
            };
        }

        let id = summary.train_id.clone();
        let trains_dir = self.dir.join(TRAINS_DIR);
        let path = trains_dir.join(file_name(&id));
        let entry = LogEntry::Summary { summary };
        let mut line = serde_json::to_vec(&entry).map_err(io::Error::other)?;
        line.push(b'\n');
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path)?;
        f.write_all(&line)?;
        f.sync_all()?;
        sync_dir(&trains_dir)?;
        append_line(&self.dir.join(INDEX_FILE), &IndexEntry { train_id: id.clone(), file: file_name(&id) })?;

        let LogEntry::Summary { summary } = entry else { unreachable!() };
        self.trains.insert(
            id.clone(),
            Train { file: path, view: summary.clone(), ingested: summary, corrections: Vec::new() },
        );
        self.order.push(id);
        Ok(Ingested::Created)
    }

    pub fn correct(
        &mut self,
        train_id: &str,
        position: usize,
        req: CorrectionRequest,
        at_ms: i64,
    ) -> Result<WagonRecord, StoreError> {
        let scheme = self.scheme.clone();
        let train = self.trains.get_mut(train_id).ok_or_else(|| StoreError::NotFound(train_id.into()))?;
        if req.train_id.as_deref().is_some_and(|t| t != train_id) || req.position.is_some_and(|p| p != position) {
            return Err(StoreError::InvalidRequest("body does not match the wagon addressed".into()));
        }
        if req.operator.trim().is_empty() {
            return Err(StoreError::InvalidRequest("operator is required".into()));
        }
        let wagon = train
            .view
            .wagons
            .get(position.wrapping_sub(1))
            .ok_or_else(|| StoreError::PositionNotFound { train_id: train_id.into(), position })?;

        let new_code = if req.reason == MARK_DAMAGED {
            req.new_code.trim().to_string()
        } else {
            let code = parse(&req.new_code).map_err(|e| StoreError::InvalidCode(e.to_string()))?;
            scheme.validate(&code).map_err(|e| StoreError::InvalidCode(e.to_string()))?;
            code.to_string()
        };
        let record = CorrectionRecord {
            train_id: train_id.into(),
            position,
            old_code: wagon.code.as_ref().map(ToString::to_string),
            new_code,
            operator: req.operator.trim().into(),
            reason: req.reason,
            at_ms,
        };
        append_line(&train.file, &LogEntry::Correction { correction: record.clone() })?;
        apply_correction(&mut train.view, &record, &scheme);
        train.corrections.push(record);
        Ok(train.view.wagons[position - 1].clone())
    }

    pub fn list(&self) -> Vec<TrainListItem> {
        self.order
            .iter()
            .filter_map(|id| self.trains.get(id))
            .map(|t| TrainListItem {
                train_id: t.view.train_id.clone(),
                started_ms: t.view.started_ms,
                wagon_count: t.view.wagon_count,
                rejection_rate: t.view.stats.rejection_rate,
                unresolved_conflicts: t.view.stats.conflicts,
            })
            .collect()
    }

    pub fn get(&self, train_id: &str) -> Option<&TrainSummary> {
        self.trains.get(train_id).map(|t| &t.view)
    }

    pub fn ingested(&self, train_id: &str) -> Option<&TrainSummary> {
        self.trains.get(train_id).map(|t| &t.ingested)
    }

    pub fn corrections(&self, train_id: &str) -> Option<&[CorrectionRecord]> {
        self.trains.get(train_id).map(|t| t.corrections.as_slice())
    }

    pub fn detail(&self, train_id: &str) -> Option<TrainDetail> {
        self.trains.get(train_id).map(|t| TrainDetail { summary: t.view.clone(), corrections: t.corrections.clone() })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}
