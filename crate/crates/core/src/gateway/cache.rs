//! Append-only JSON-lines response cache keyed by prompt content hash.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key_hash: String,
    pub prompt: String,
    pub raw_text: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Hex SHA-256 of the rendered prompt.
pub fn prompt_key(rendered: &str) -> String {
    let digest = Sha256::digest(rendered.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Default)]
pub struct PromptCache {
    entries: HashMap<String, CacheEntry>,
    file: Option<(PathBuf, File)>,
}

impl PromptCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (or create) a cache file and load every existing entry. Later
    /// lines for the same key do not replace the first one.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
            for line in reader.lines() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(&line)?;
                entries.entry(entry.key_hash.clone()).or_insert(entry);
            }
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            entries,
            file: Some((path.to_path_buf(), file)),
        })
    }

    pub fn get(&self, key: &str) -> Option<&CacheEntry> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Persist and remember a response. Existing keys are left untouched.
    pub fn insert(&mut self, key: String, prompt: &str, raw_text: &str) -> Result<()> {
        if self.entries.contains_key(&key) {
            return Ok(());
        }
        let entry = CacheEntry {
            key_hash: key.clone(),
            prompt: prompt.to_string(),
            raw_text: raw_text.to_string(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        if let Some((path, file)) = &mut self.file {
            let mut line = serde_json::to_string(&entry)?;
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(|e| Error::io(path.clone(), e))?;
            file.flush().map_err(|e| Error::io(path.clone(), e))?;
        }
        self.entries.insert(key, entry);
        Ok(())
    }
}
