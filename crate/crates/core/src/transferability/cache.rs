use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::InitKind;
use crate::{Error, Result};

pub const CACHE_COLUMNS: [&str; 6] = ["init_kind", "n", "seed", "scheme", "lr", "accuracy"];

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct CacheKey {
    pub init_kind: InitKind,
    pub n: usize,
    pub seed: u64,
    pub scheme: String,
    /// Bit pattern of the learning rate, so lookups are exact.
    pub lr_bits: u64,
}

/// Per-run accuracies keyed by `(init_kind, n, seed, scheme, lr)`, backed by
/// a CSV that finished runs are appended to, so interrupted curve builds
/// resume where they left off. Safe to share between worker threads.
#[derive(Debug, Default)]
pub struct CurveCache {
    path: Option<PathBuf>,
    entries: Mutex<BTreeMap<CacheKey, f64>>,
    hits: AtomicUsize,
}

fn parse_kind(s: &str) -> Option<InitKind> {
    match s {
        "transfer" => Some(InitKind::Transfer),
        "scratch" => Some(InitKind::Scratch),
        _ => None,
    }
}

impl CurveCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) the cache at `path`, reading any existing rows.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        if path.exists() {
            let mut r = csv::Reader::from_path(path)?;
            if r.headers()?.iter().ne(CACHE_COLUMNS) {
                return Err(Error::format(path, "unexpected cache header"));
            }
            for row in r.records() {
                let row = row?;
                let bad = || Error::format(path, format!("bad cache row {row:?}"));
                let key = CacheKey {
                    init_kind: parse_kind(&row[0]).ok_or_else(bad)?,
                    n: row[1].parse().map_err(|_| bad())?,
                    seed: row[2].parse().map_err(|_| bad())?,
                    scheme: row[3].to_string(),
                    lr_bits: row[4].parse::<f64>().map_err(|_| bad())?.to_bits(),
                };
                entries.insert(key, row[5].parse().map_err(|_| bad())?);
            }
        }
        Ok(CurveCache {
            path: Some(path.to_path_buf()),
            entries: Mutex::new(entries),
            hits: AtomicUsize::new(0),
        })
    }

    /// Looks up a finished run, counting the hit.
    pub fn get(&self, key: &CacheKey) -> Option<f64> {
        let found = self.entries.lock().unwrap().get(key).copied();
        if found.is_some() {
            self.hits.fetch_add(1, Ordering::Relaxed);
        }
        found
    }

    /// Successful lookups since this cache was opened.
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a result in memory and, if file-backed, appends it on disk.
    pub fn insert(&self, key: CacheKey, accuracy: f64) -> Result<()> {
        let mut entries = self.entries.lock().unwrap();
        if let Some(path) = &self.path {
            let fresh = !path.exists();
            let file = OpenOptions::new().create(true).append(true).open(path)?;
            let mut w = csv::Writer::from_writer(file);
            if fresh {
                w.write_record(CACHE_COLUMNS)?;
            }
            w.write_record(row(&key, accuracy))?;
            w.flush()?;
        }
        entries.insert(key, accuracy);
        Ok(())
    }

    /// Rewrites the file in key order, so its bytes do not depend on the
    /// order in which parallel runs finished. The rewrite goes through a
    /// temporary file and a rename.
    pub fn compact(&self) -> Result<()> {
        let entries = self.entries.lock().unwrap();
        let Some(path) = &self.path else {
            return Ok(());
        };
        let tmp = path.with_extension("csv.tmp");
        let mut w = csv::Writer::from_path(&tmp)?;
        w.write_record(CACHE_COLUMNS)?;
        for (key, acc) in entries.iter() {
            w.write_record(row(key, *acc))?;
        }
        w.flush()?;
        drop(w);
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

fn row(key: &CacheKey, accuracy: f64) -> [String; 6] {
    [
        key.init_kind.as_str().to_string(),
        key.n.to_string(),
        key.seed.to_string(),
        key.scheme.clone(),
        f64::from_bits(key.lr_bits).to_string(),
        accuracy.to_string(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.csv");
        let key = CacheKey {
            init_kind: InitKind::Transfer,
            n: 32,
            seed: 4,
            scheme: "FF".into(),
            lr_bits: 1e-3f64.to_bits(),
        };
        let cache = CurveCache::open(&path).unwrap();
        cache.insert(key.clone(), 0.625).unwrap();
        cache
            .insert(CacheKey { init_kind: InitKind::Scratch, ..key.clone() }, 0.5)
            .unwrap();
        let again = CurveCache::open(&path).unwrap();
        assert_eq!(again.len(), 2);
        assert_eq!(again.get(&key), Some(0.625));
        assert_eq!(again.hits(), 1);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("init_kind,n,seed,scheme,lr,accuracy\n"));
    }

    #[test]
    fn compaction_erases_insertion_order() {
        let dir = tempfile::tempdir().unwrap();
        let keys: Vec<CacheKey> = (0..6)
            .map(|i| CacheKey {
                init_kind: InitKind::Transfer,
                n: 8 << (i % 3),
                seed: i / 3,
                scheme: "FF".into(),
                lr_bits: 1e-3f64.to_bits(),
            })
            .collect();
        let mut bytes = Vec::new();
        for (name, order) in [("a.csv", [0, 1, 2, 3, 4, 5]), ("b.csv", [5, 3, 1, 0, 4, 2])] {
            let path = dir.path().join(name);
            let cache = CurveCache::open(&path).unwrap();
            for i in order {
                cache.insert(keys[i].clone(), i as f64 / 8.0).unwrap();
            }
            cache.compact().unwrap();
            assert_eq!(CurveCache::open(&path).unwrap().len(), 6);
            bytes.push(std::fs::read(&path).unwrap());
        }
        assert_eq!(bytes[0], bytes[1]);
    }
}
