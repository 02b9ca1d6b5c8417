use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatBackend, ChatError, PromptPair};

/// Cache key: SHA-256 over model, system prompt and user prompt.
pub fn reply_key(model: &str, prompt: &PromptPair) -> String {
    let mut h = Sha256::new();
    for part in [model, &prompt.system, &prompt.user] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Serialize, Deserialize)]
struct StoredReply {
    model: String,
    reply: String,
}

/// Memoizes chat replies in memory and, when a directory is given, on disk
/// as one JSON file per key.
pub struct CachedChat {
    backend: Box<dyn ChatBackend>,
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, String>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
}

impl CachedChat {
    pub fn new(backend: Box<dyn ChatBackend>, dir: Option<PathBuf>) -> Self {
        Self {
            backend,
            dir,
            memory: RwLock::new(HashMap::new()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn model(&self) -> &str {
        self.backend.model()
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::SeqCst),
            misses: self.misses.load(Ordering::SeqCst),
        }
    }

    fn path_for(&self, key: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(&key[..2]).join(format!("{key}.json")))
    }

    fn lookup(&self, key: &str) -> Option<String> {
        if let Some(r) = self
            .memory
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(key)
        {
            return Some(r.clone());
        }
        let path = self.path_for(key)?;
        let text = fs::read_to_string(path).ok()?;
        let stored: StoredReply = serde_json::from_str(&text).ok()?;
        (stored.model == self.model()).then_some(stored.reply)
    }

    fn store(&self, key: &str, reply: &str) -> Result<(), ChatError> {
        self.memory
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key.to_string(), reply.to_string());
        if let Some(path) = self.path_for(key) {
            let dir = path.parent().expect("cache path has a parent");
            fs::create_dir_all(dir)?;
            let body = serde_json::to_string(&StoredReply {
                model: self.model().to_string(),
                reply: reply.to_string(),
            })
            .expect("serializable reply");
            let tmp = dir.join(format!(
                "{key}.{}.{:?}.tmp",
                std::process::id(),
                std::thread::current().id()
            ));
            fs::write(&tmp, body)?;
            fs::rename(&tmp, &path)?;
        }
        Ok(())
    }

    /// Returns the cached reply for this prompt or asks the backend. Errors
    /// are only possible on a miss.
    pub fn cached_call(&self, prompt: &PromptPair) -> Result<String, ChatError> {
        let key = reply_key(self.model(), prompt);
        if let Some(reply) = self.lookup(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(reply);
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let reply = self.backend.complete(prompt)?;
        if let Err(e) = self.store(&key, &reply) {
            log::warn!("could not persist chat reply: {e}");
        }
        Ok(reply)
    }
}
