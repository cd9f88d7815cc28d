//! Reward memoization: an in-memory map backed by an append-only JSON-lines log,
//! plus a directory of backbone checkpoints.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Knn5,
    Linear,
    Finetune,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Knn5 => "knn5",
            EvalMode::Linear => "linear",
            EvalMode::Finetune => "finetune",
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn5" => Ok(EvalMode::Knn5),
            "linear" => Ok(EvalMode::Linear),
            "finetune" => Ok(EvalMode::Finetune),
            _ => Err(Error::InvalidArgument(format!("unknown eval mode `{s}`"))),
        }
    }
}

/// Where the evaluated backbone came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneSource {
    /// Pre-trained on data generated with the record's action.
    Simulated,
    /// Random initialisation, no pre-training.
    Scratch,
    /// Pre-trained on the held-out reference corpus.
    Reference,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub task_checksum: String,
    pub source: BackboneSource,
    pub action: u32,
    pub m: usize,
    pub mode: EvalMode,
    pub config_checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub task: String,
    pub task_checksum: String,
    pub source: BackboneSource,
    pub action: u32,
    pub m: usize,
    pub mode: EvalMode,
    pub reward: f64,
    pub backbone_checksum: String,
    pub config_checksum: String,
    /// Seconds since the Unix epoch when the record was first computed. Not part of [`RewardRecord::checksum`].
    pub timestamp: u64,
}

impl RewardRecord {
    pub fn key(&self) -> CacheKey {
        CacheKey {
            task_checksum: self.task_checksum.clone(),
            source: self.source,
            action: self.action,
            m: self.m,
            mode: self.mode,
            config_checksum: self.config_checksum.clone(),
        }
    }

    /// Checksum of every field except the timestamp.
    pub fn checksum(&self) -> String {
        let content = serde_json::json!([
            self.task,
            self.task_checksum,
            self.source,
            self.action,
            self.m,
            self.mode,
            self.reward,
            self.backbone_checksum,
            self.config_checksum,
        ]);
        seed::checksum(content.to_string().as_bytes())
    }
}

struct Inner {
    map: HashMap<CacheKey, RewardRecord>,
    log: Option<File>,
}

/// Thread-safe reward store. Reads and writes serialize on one lock; the
/// expensive computations happen outside it.
pub struct RewardCache {
    dir: Option<PathBuf>,
    inner: Mutex<Inner>,
    hits: AtomicU64,
    misses: AtomicU64,
}

pub const RECORD_LOG: &str = "records.jsonl";

impl RewardCache {
    pub fn in_memory() -> Self {
        RewardCache {
            dir: None,
            inner: Mutex::new(Inner {
                map: HashMap::new(),
                log: None,
            }),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Opens (or creates) a cache directory and replays its record log.
    ///
    /// A malformed final line, left by a crash mid-append, is dropped and
    /// truncated away; malformed lines elsewhere are an error.
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RECORD_LOG);
        let mut map = HashMap::new();
        let mut good_len = 0u64;
        if path.exists() {
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            let lines: Vec<String> = BufReader::new(f)
                .split(b'\n')
                .map(|l| l.map(|b| String::from_utf8_lossy(&b).into_owned()))
                .collect::<std::io::Result<_>>()
                .map_err(|e| Error::io(&path, e))?;
            let total = lines.len();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    good_len += line.len() as u64 + 1;
                    continue;
                }
                match serde_json::from_str::<RewardRecord>(line) {
                    Ok(r) => {
                        map.insert(r.key(), r);
                        good_len += line.len() as u64 + 1;
                    }
                    Err(_) if i + 1 == total => break,
                    Err(e) => {
                        return Err(Error::format("reward log", format!("line {}: {e}", i + 1)));
                    }
                }
            }
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let len = log.metadata().map_err(|e| Error::io(&path, e))?.len();
        if good_len < len {
            log.set_len(good_len).map_err(|e| Error::io(&path, e))?;
        }
        Ok(RewardCache {
            dir: Some(dir.to_path_buf()),
            inner: Mutex::new(Inner {
                map,
                log: Some(log),
            }),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn get(&self, key: &CacheKey) -> Option<RewardRecord> {
        let found = self.inner.lock().expect("cache lock").map.get(key).cloned();
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    /// Lookup that leaves the hit and miss counters alone.
    pub fn peek(&self, key: &CacheKey) -> Option<RewardRecord> {
        self.inner.lock().expect("cache lock").map.get(key).cloned()
    }

    /// Stores `record` unless its key is already present; returns the stored record.
    pub fn insert(&self, record: RewardRecord) -> Result<RewardRecord> {
        if !(0.0..=100.0).contains(&record.reward) {
            return Err(Error::InvalidArgument(format!(
                "reward {} outside [0, 100]",
                record.reward
            )));
        }
        let mut inner = self.inner.lock().expect("cache lock");
        let key = record.key();
        if let Some(existing) = inner.map.get(&key) {
            return Ok(existing.clone());
        }
        if let Some(log) = inner.log.as_mut() {
            let mut line = serde_json::to_string(&record)?;
            line.push('\n');
            let path = self
                .dir
                .as_ref()
                .map(|d| d.join(RECORD_LOG))
                .unwrap_or_default();
            log.write_all(line.as_bytes())
                .and_then(|_| log.flush())
                .map_err(|e| Error::io(&path, e))?;
        }
        inner.map.insert(key, record.clone());
        Ok(record)
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All records, sorted by key.
    pub fn records(&self) -> Vec<RewardRecord> {
        let mut v: Vec<RewardRecord> = self
            .inner
            .lock()
            .expect("cache lock")
            .map
            .values()
            .cloned()
            .collect();
        v.sort_by_key(|r| r.key());
        v
    }

    /// Checkpoint location for a backbone, if the cache is on disk.
    pub fn backbone_path(&self, config_checksum: &str, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| {
            d.join("backbones")
                .join(config_checksum)
                .join(format!("{name}.s2tnet"))
        })
    }
}

pub fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(action: u32, reward: f64) -> RewardRecord {
        RewardRecord {
            task: "t".into(),
            task_checksum: "abc".into(),
            source: BackboneSource::Simulated,
            action,
            m: 8,
            mode: EvalMode::Knn5,
            reward,
            backbone_checksum: "b".into(),
            config_checksum: "c".into(),
            timestamp: 1,
        }
    }

    #[test]
    fn replay_restores_records_and_drops_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        {
            let c = RewardCache::open(dir.path()).unwrap();
            c.insert(rec(1, 50.0)).unwrap();
            c.insert(rec(2, 60.0)).unwrap();
        }
        let log = dir.path().join(RECORD_LOG);
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(b"{\"task\":\"t\",\"tas").unwrap();
        drop(f);
        let c = RewardCache::open(dir.path()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get(&rec(2, 0.0).key()).unwrap().reward, 60.0);
        assert_eq!(c.hits(), 1);
        c.insert(rec(3, 70.0)).unwrap();
        drop(c);
        assert_eq!(RewardCache::open(dir.path()).unwrap().len(), 3);
    }

    #[test]
    fn out_of_range_rewards_are_rejected() {
        let c = RewardCache::in_memory();
        assert!(c.insert(rec(0, 100.5)).is_err());
        assert!(c.insert(rec(0, -1.0)).is_err());
    }

    #[test]
    fn checksum_ignores_timestamp() {
        let mut r = rec(4, 10.0);
        let a = r.checksum();
        r.timestamp = 99;
        assert_eq!(a, r.checksum());
        r.reward = 11.0;
        assert_ne!(a, r.checksum());
    }
}
