use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::FactCandidate;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub question_id: String,
    pub model_id: String,
    pub sampling_fingerprint: String,
}

impl CacheKey {
    /// Content address of the entry.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for part in [&self.question_id, &self.model_id, &self.sampling_fingerprint] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: CacheKey,
    candidates: Vec<FactCandidate>,
}

/// Generated facts keyed by question, model and sampling fingerprint.
///
/// Entries live in memory and, when opened on a directory, as one JSON file per
/// key under `<dir>/<digest[..2]>/<digest>.json`. Every store is also appended
/// to an optional JSONL log.
pub struct FactCache {
    dir: Option<PathBuf>,
    log: Option<Mutex<File>>,
    entries: RwLock<HashMap<CacheKey, Vec<FactCandidate>>>,
    key_locks: Mutex<HashMap<CacheKey, Arc<Mutex<()>>>>,
}

impl FactCache {
    pub fn in_memory() -> Self {
        FactCache {
            dir: None,
            log: None,
            entries: RwLock::default(),
            key_locks: Mutex::default(),
        }
    }

    pub fn open(dir: &Path, log_path: Option<&Path>) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let log = match log_path {
            Some(p) => {
                if let Some(parent) = p.parent() {
                    fs::create_dir_all(parent)?;
                }
                Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?))
            }
            None => None,
        };
        Ok(FactCache { dir: Some(dir.to_path_buf()), log, ..Self::in_memory() })
    }

    fn entry_path(&self, key: &CacheKey) -> Option<PathBuf> {
        let digest = key.digest();
        self.dir.as_ref().map(|d| d.join(&digest[..2]).join(format!("{digest}.json")))
    }

    fn key_lock(&self, key: &CacheKey) -> Arc<Mutex<()>> {
        self.key_locks.lock().unwrap().entry(key.clone()).or_default().clone()
    }

    pub fn get(&self, key: &CacheKey) -> io::Result<Option<Vec<FactCandidate>>> {
        if let Some(hit) = self.entries.read().unwrap().get(key) {
            return Ok(Some(hit.clone()));
        }
        let Some(path) = self.entry_path(key) else {
            return Ok(None);
        };
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        let entry: Entry = serde_json::from_slice(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        if entry.key != *key {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("cache entry {} holds a different key", path.display()),
            ));
        }
        self.entries.write().unwrap().insert(key.clone(), entry.candidates.clone());
        Ok(Some(entry.candidates))
    }

    pub fn put(&self, key: &CacheKey, candidates: &[FactCandidate]) -> io::Result<()> {
        let lock = self.key_lock(key);
        let _guard = lock.lock().unwrap();
        let entry = Entry { key: key.clone(), candidates: candidates.to_vec() };
        if let Some(path) = self.entry_path(key) {
            let parent = path.parent().expect("entry path has a parent");
            fs::create_dir_all(parent)?;
            let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
            serde_json::to_writer(&mut tmp, &entry)?;
            tmp.persist(&path).map_err(|e| e.error)?;
        }
        if let Some(log) = &self.log {
            let mut line = serde_json::to_vec(&entry)?;
            line.push(b'\n');
            log.lock().unwrap().write_all(&line)?;
        }
        self.entries.write().unwrap().insert(key.clone(), entry.candidates);
        Ok(())
    }
}
