//! File-backed failure store.
//!
//! A store directory holds two append-only JSON-lines files: `bugs.jsonl`
//! with one [`FailureRecord`] per line and `sequences.jsonl` with the
//! component sequence computed for each dump at ingestion time.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sequence::ComponentSequence;
use crate::trainer::{build_groups, BugId, FailureRecord, Grouping};

pub const BUGS_FILE: &str = "bugs.jsonl";
pub const SEQUENCES_FILE: &str = "sequences.jsonl";

/// Which stored failures count as recent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Created no earlier than this many days before detection time.
    Days(u32),
    /// The most recently created records.
    LastRecords(usize),
}

impl Default for Window {
    fn default() -> Self {
        Window::Days(30)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredFailure {
    pub record: FailureRecord,
    pub sequence: ComponentSequence,
}

#[derive(Debug, Clone, Default)]
pub struct FailureStore {
    dir: Option<PathBuf>,
    entries: Vec<StoredFailure>,
    by_dump: HashMap<String, usize>,
    /// Entry indices ordered by (creation_time, bug_id).
    by_time: BTreeSet<(DateTime<Utc>, BugId, usize)>,
    by_top_component: HashMap<String, Vec<usize>>,
}

impl FailureStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a store directory.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let records: Vec<FailureRecord> = read_lines(&dir.join(BUGS_FILE))?;
        let sequences: Vec<ComponentSequence> = read_lines(&dir.join(SEQUENCES_FILE))?;
        let mut by_id: HashMap<String, ComponentSequence> =
            sequences.into_iter().map(|s| (s.dump_id.clone(), s)).collect();

        let mut store = FailureStore {
            dir: Some(dir.to_path_buf()),
            ..Default::default()
        };
        for record in records {
            let sequence = by_id.remove(&record.dump_id).ok_or_else(|| {
                Error::format(dir.join(SEQUENCES_FILE), 0, format!("no sequence for dump {}", record.dump_id))
            })?;
            store.insert(StoredFailure { record, sequence })?;
        }
        Ok(store)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[StoredFailure] {
        &self.entries
    }

    pub fn records(&self) -> impl Iterator<Item = &FailureRecord> {
        self.entries.iter().map(|e| &e.record)
    }

    pub fn get_by_dump(&self, dump_id: &str) -> Option<&StoredFailure> {
        self.by_dump.get(dump_id).map(|&i| &self.entries[i])
    }

    pub fn contains_dump(&self, dump_id: &str) -> bool {
        self.by_dump.contains_key(dump_id)
    }

    pub fn with_top_component<'s>(&'s self, component: &str) -> impl Iterator<Item = &'s StoredFailure> + 's {
        self.by_top_component
            .get(component)
            .into_iter()
            .flatten()
            .map(move |&i| &self.entries[i])
    }

    /// Bug ids are allocated in increasing order, starting at 1.
    pub fn next_bug_id(&self) -> BugId {
        self.entries.iter().map(|e| e.record.bug_id).max().unwrap_or(0) + 1
    }

    pub fn grouping(&self) -> Grouping {
        let records: Vec<FailureRecord> = self.records().cloned().collect();
        build_groups(&records)
    }

    /// Failures inside `window` as seen at `now`, newest first.
    pub fn recent(&self, window: Window, now: DateTime<Utc>) -> Vec<&StoredFailure> {
        let newest_first = self.by_time.iter().rev().map(|&(_, _, i)| &self.entries[i]);
        match window {
            Window::Days(days) => {
                let since = now - Duration::days(i64::from(days));
                newest_first.filter(|e| e.record.creation_time >= since).collect()
            }
            Window::LastRecords(count) => newest_first.take(count).collect(),
        }
    }

    /// Appends a failure, persisting it when the store is file-backed.
    pub fn append(&mut self, record: FailureRecord, sequence: ComponentSequence) -> Result<()> {
        if self.contains_dump(&record.dump_id) {
            return Err(Error::DuplicateDumpId(record.dump_id));
        }
        if self.entries.iter().any(|e| e.record.bug_id == record.bug_id) {
            return Err(Error::StoreWrite(format!("bug id {} already allocated", record.bug_id)));
        }
        if let Some(dir) = &self.dir {
            // Sequence first: a record is only visible once its sequence is on disk.
            append_line(&dir.join(SEQUENCES_FILE), &sequence)?;
            append_line(&dir.join(BUGS_FILE), &record)?;
        }
        self.insert(StoredFailure { record, sequence })
    }

    fn insert(&mut self, entry: StoredFailure) -> Result<()> {
        let index = self.entries.len();
        let record = &entry.record;
        if self.by_dump.insert(record.dump_id.clone(), index).is_some() {
            return Err(Error::DuplicateDumpId(record.dump_id.clone()));
        }
        self.by_time.insert((record.creation_time, record.bug_id, index));
        self.by_top_component
            .entry(record.top_component.clone())
            .or_default()
            .push(index);
        self.entries.push(entry);
        Ok(())
    }
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(path, n + 1, e.to_string()))?);
    }
    Ok(out)
}

/// Loads bug records from a JSON-lines file in the store's record format.
pub fn load_records(path: &Path) -> Result<Vec<FailureRecord>> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    read_lines(path)
}

pub fn record_line(record: &FailureRecord) -> String {
    serde_json::to_string(record).expect("records serialize")
}

fn append_line<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut line = serde_json::to_string(value).map_err(|e| Error::StoreWrite(e.to_string()))?;
    line.push('\n');
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::StoreWrite(format!("{}: {e}", path.display())))?;
    file.write_all(line.as_bytes())
        .and_then(|_| file.flush())
        .map_err(|e| Error::StoreWrite(format!("{}: {e}", path.display())))
}
