//! Response cache keyed by a hash of prompt, backend name and decoding
//! parameters. Entries live in memory and, when a directory is configured,
//! as one JSON file per key.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::backend::DecodingParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub backend: String,
    pub params: DecodingParams,
    pub prompt: String,
    pub response: String,
}

pub fn cache_key(prompt: &str, backend: &str, params: &DecodingParams) -> String {
    let mut hasher = Sha256::new();
    hasher.update(prompt.as_bytes());
    hasher.update([0u8]);
    hasher.update(backend.as_bytes());
    hasher.update([0u8]);
    hasher.update(serde_json::to_string(params).unwrap_or_default().as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    entries: Mutex<HashMap<String, String>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir: Some(dir),
            entries: Mutex::default(),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path_for(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(hit) = entries.get(key) {
            return Some(hit.clone());
        }
        let path = self.path_for(key)?;
        let text = std::fs::read_to_string(&path).ok()?;
        match serde_json::from_str::<CacheEntry>(&text) {
            Ok(entry) if entry.key == key => {
                entries.insert(key.to_string(), entry.response.clone());
                Some(entry.response)
            }
            _ => {
                log::warn!("ignoring corrupt cache entry {}", path.display());
                None
            }
        }
    }

    pub fn put(&self, entry: CacheEntry) -> Result<()> {
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(path) = self.path_for(&entry.key) {
            let tmp = path.with_extension("json.tmp");
            let body = serde_json::to_string_pretty(&entry)?;
            std::fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
            std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        }
        entries.insert(entry.key, entry.response);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().map(|e| e.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_depends_on_every_component() {
        let p = DecodingParams::default();
        let base = cache_key("prompt", "mock", &p);
        assert_eq!(base.len(), 64);
        assert_ne!(base, cache_key("prompt2", "mock", &p));
        assert_ne!(base, cache_key("prompt", "remote:gpt-4o", &p));
        let hot = DecodingParams {
            temperature: 0.7,
            ..p.clone()
        };
        assert_ne!(base, cache_key("prompt", "mock", &hot));
        // separator prevents prompt/backend boundary collisions
        assert_ne!(cache_key("ab", "c", &p), cache_key("a", "bc", &p));
    }

    #[test]
    fn disk_entries_survive_a_new_cache_instance() {
        let dir = tempfile::tempdir().unwrap();
        let key = cache_key("p", "mock", &DecodingParams::default());
        let cache = ResponseCache::on_disk(dir.path()).unwrap();
        cache
            .put(CacheEntry {
                key: key.clone(),
                backend: "mock".into(),
                params: DecodingParams::default(),
                prompt: "p".into(),
                response: "{}".into(),
            })
            .unwrap();
        assert!(dir.path().join(format!("{key}.json")).exists());
        let reopened = ResponseCache::on_disk(dir.path()).unwrap();
        assert_eq!(reopened.get(&key).as_deref(), Some("{}"));
        assert_eq!(reopened.get("missing"), None);
    }
}
