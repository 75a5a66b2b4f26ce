//! Append-only JSON-lines results store.
//!
//! Each line is `<crc32c as 8 hex digits> <record json>`. A sibling `.lock`
//! file enforces a single writer.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::BenchError;
use crate::domain::{RunKey, RunRecord};

pub fn encode_line(record: &RunRecord) -> String {
    let json = serde_json::to_string(record).expect("run records serialize");
    format!("{:08x} {json}", crc32c::crc32c(json.as_bytes()))
}

pub fn decode_line(line: &str) -> Result<RunRecord, String> {
    let (crc, json) = line.split_once(' ').ok_or("missing checksum")?;
    let stored = u32::from_str_radix(crc, 16).map_err(|_| format!("bad checksum field {crc:?}"))?;
    let computed = crc32c::crc32c(json.as_bytes());
    if stored != computed {
        return Err(format!("checksum {stored:08x} != {computed:08x}"));
    }
    serde_json::from_str(json).map_err(|e| e.to_string())
}

/// Every readable record, in file order, plus one warning per skipped line.
pub fn read_records(path: &Path) -> Result<(Vec<RunRecord>, Vec<String>), BenchError> {
    if !path.exists() {
        return Ok((Vec::new(), Vec::new()));
    }
    let file = File::open(path).map_err(|e| BenchError::io(path, e))?;
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                warnings.push(format!("{}:{}: {e}", path.display(), i + 1));
                continue;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        match decode_line(&line) {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("{}:{}: skipping corrupted record ({e})", path.display(), i + 1);
                warnings.push(format!("{}:{}: {e}", path.display(), i + 1));
            }
        }
    }
    Ok((records, warnings))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Query<'a> {
    pub model: Option<&'a str>,
    pub task: Option<&'a str>,
    pub dataset: Option<&'a str>,
    pub seed: Option<u64>,
    pub config_hash: Option<u64>,
}

impl Query<'_> {
    pub fn matches(&self, r: &RunRecord) -> bool {
        self.model.map_or(true, |m| r.model_id == m)
            && self.task.map_or(true, |t| r.task_id == t)
            && self.dataset.map_or(true, |d| r.dataset_id == d)
            && self.seed.map_or(true, |s| r.seed == s)
            && self.config_hash.map_or(true, |h| r.config_hash == h)
    }
}

/// Exclusive writer handle; the lock is released on drop.
pub struct Store {
    path: PathBuf,
    lock: PathBuf,
    records: Vec<RunRecord>,
    seen: BTreeSet<(RunKey, u32)>,
    pub warnings: Vec<String>,
}

impl Store {
    pub fn lock_path(path: &Path) -> PathBuf {
        let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".lock");
        path.with_file_name(name)
    }

    pub fn open(path: &Path) -> Result<Store, BenchError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
        }
        let lock = Store::lock_path(path);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = fs::read_to_string(&lock).unwrap_or_default();
                return Err(BenchError::Locked { lock, holder: holder.trim().to_string() });
            }
            Err(e) => return Err(BenchError::io(&lock, e)),
        }
        let (records, warnings) = match read_records(path) {
            Ok(x) => x,
            Err(e) => {
                let _ = fs::remove_file(&lock);
                return Err(e);
            }
        };
        let seen = records.iter().map(|r| (r.key(), r.attempt)).collect();
        Ok(Store { path: path.to_path_buf(), lock, records, seen, warnings })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn query(&self, q: &Query<'_>) -> Vec<&RunRecord> {
        self.records.iter().filter(|r| q.matches(r)).collect()
    }

    /// Appends one line; a record repeating an existing key and attempt is rejected.
    pub fn append(&mut self, record: RunRecord) -> Result<(), BenchError> {
        let id = (record.key(), record.attempt);
        if self.seen.contains(&id) {
            return Err(BenchError::Duplicate(format!(
                "{}/{}/{} seed {} config {:016x} attempt {}",
                record.model_id, record.task_id, record.dataset_id, record.seed, record.config_hash, record.attempt
            )));
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| BenchError::io(&self.path, e))?;
        let mut line = encode_line(&record);
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(|e| BenchError::io(&self.path, e))?;
        f.sync_data().map_err(|e| BenchError::io(&self.path, e))?;
        self.seen.insert(id);
        self.records.push(record);
        Ok(())
    }

    /// Rewrites the file keeping the latest attempt per key; returns the number of lines dropped.
    pub fn compact(&mut self) -> Result<usize, BenchError> {
        let before = self.records.len() + self.warnings.len();
        let mut latest: std::collections::BTreeMap<RunKey, usize> = std::collections::BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            match latest.get(&r.key()) {
                Some(&j) if self.records[j].attempt > r.attempt => {}
                _ => {
                    latest.insert(r.key(), i);
                }
            }
        }
        let keep: BTreeSet<usize> = latest.into_values().collect();
        let kept: Vec<RunRecord> =
            self.records.iter().enumerate().filter(|(i, _)| keep.contains(i)).map(|(_, r)| r.clone()).collect();
        let body: String = kept.iter().map(|r| encode_line(r) + "\n").collect();
        crate::data::atomic_write(&self.path, body.as_bytes()).map_err(|e| BenchError::Store(e.to_string()))?;
        self.seen = kept.iter().map(|r| (r.key(), r.attempt)).collect();
        self.records = kept;
        self.warnings.clear();
        Ok(before - self.records.len())
    }
}

impl Drop for Store {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}
