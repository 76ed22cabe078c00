//! Content-addressed response cache.
//!
//! The key digests everything that shapes a completion: model, system
//! prompt, user prompt, demonstrations, temperature, and seed. `max_tokens`
//! is deliberately excluded; a longer budget for the same prompt should hit
//! the recorded response. Entries live at `cache/<first two hex>/<digest>.json`
//! and are written atomically (temp file + rename) so concurrent workers
//! never observe torn JSON.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Demonstration, LlmError, LlmRequest, LlmResponse};

/// Hex-encoded SHA-256 digest identifying one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheKey {
    digest: String,
}

impl CacheKey {
    pub fn digest(&self) -> &str {
        &self.digest
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

pub fn cache_key(request: &LlmRequest) -> CacheKey {
    #[derive(Serialize)]
    struct KeyMaterial<'a> {
        model: &'a str,
        system_prompt: &'a str,
        user_prompt: &'a str,
        demonstrations: &'a [Demonstration],
        temperature: f64,
        seed: Option<i64>,
    }
    let material = KeyMaterial {
        model: &request.model,
        system_prompt: &request.system_prompt,
        user_prompt: &request.user_prompt,
        demonstrations: &request.demonstrations,
        temperature: request.temperature,
        seed: request.seed,
    };
    let canonical = serde_json::to_vec(&material).expect("key material serializes");
    CacheKey {
        digest: sha256_hex(&canonical),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    digest: String,
    request: LlmRequest,
    response: LlmResponse,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub entries: u64,
    pub bytes: u64,
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    tmp_counter: AtomicU64,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ResponseCache {
            dir: dir.into(),
            tmp_counter: AtomicU64::new(0),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(&key.digest()[..2]).join(format!("{}.json", key.digest()))
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.entry_path(key).is_file()
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<LlmResponse>, LlmError> {
        let path = self.entry_path(key);
        let text = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(LlmError::io(format!("reading cache entry {}", path.display()), e)),
        };
        let entry: CacheEntry = serde_json::from_str(&text).map_err(|e| {
            LlmError::Config(format!("corrupt cache entry {}: {e}", path.display()))
        })?;
        Ok(Some(entry.response))
    }

    pub fn put(
        &self,
        key: &CacheKey,
        request: &LlmRequest,
        response: &LlmResponse,
    ) -> Result<(), LlmError> {
        let path = self.entry_path(key);
        let parent = path.parent().expect("entry path has a shard directory");
        fs::create_dir_all(parent)
            .map_err(|e| LlmError::io(format!("creating cache shard {}", parent.display()), e))?;

        let entry = CacheEntry {
            digest: key.digest().to_string(),
            request: request.clone(),
            response: LlmResponse {
                cached: false,
                ..response.clone()
            },
        };
        let payload = serde_json::to_vec(&entry).expect("cache entry serializes");

        let tmp = parent.join(format!(
            ".{}.{}.{}.tmp",
            key.digest(),
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::Relaxed),
        ));
        fs::write(&tmp, &payload)
            .map_err(|e| LlmError::io(format!("writing cache entry {}", tmp.display()), e))?;
        fs::rename(&tmp, &path).map_err(|e| {
            let _ = fs::remove_file(&tmp);
            LlmError::io(format!("publishing cache entry {}", path.display()), e)
        })?;
        Ok(())
    }

    fn walk_entries(&self) -> Result<Vec<PathBuf>, LlmError> {
        let mut paths = Vec::new();
        let shards = match fs::read_dir(&self.dir) {
            Ok(shards) => shards,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(paths),
            Err(e) => {
                return Err(LlmError::io(format!("listing cache {}", self.dir.display()), e))
            }
        };
        for shard in shards {
            let shard = shard.map_err(|e| LlmError::io("listing cache shard", e))?;
            if !shard.path().is_dir() {
                continue;
            }
            let entries = fs::read_dir(shard.path())
                .map_err(|e| LlmError::io("listing cache shard", e))?;
            for entry in entries {
                let entry = entry.map_err(|e| LlmError::io("listing cache entry", e))?;
                let path = entry.path();
                if path.extension().is_some_and(|ext| ext == "json") {
                    paths.push(path);
                }
            }
        }
        Ok(paths)
    }

    pub fn stats(&self) -> Result<CacheStats, LlmError> {
        let mut stats = CacheStats::default();
        for path in self.walk_entries()? {
            let meta = fs::metadata(&path)
                .map_err(|e| LlmError::io(format!("stat {}", path.display()), e))?;
            stats.entries += 1;
            stats.bytes += meta.len();
        }
        Ok(stats)
    }

    /// Removes entries whose modification time is older than `max_age`.
    /// Returns (removed, kept).
    pub fn gc(&self, max_age: std::time::Duration) -> Result<(u64, u64), LlmError> {
        let now = std::time::SystemTime::now();
        let (mut removed, mut kept) = (0u64, 0u64);
        for path in self.walk_entries()? {
            let meta = fs::metadata(&path)
                .map_err(|e| LlmError::io(format!("stat {}", path.display()), e))?;
            let expired = meta
                .modified()
                .ok()
                .and_then(|mtime| now.duration_since(mtime).ok())
                .is_some_and(|age| age > max_age);
            if expired {
                fs::remove_file(&path)
                    .map_err(|e| LlmError::io(format!("removing {}", path.display()), e))?;
                removed += 1;
            } else {
                kept += 1;
            }
        }
        Ok((removed, kept))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn request(user: &str) -> LlmRequest {
        LlmRequest {
            model: "m".into(),
            system_prompt: "s".into(),
            user_prompt: user.into(),
            demonstrations: vec![],
            temperature: 0.0,
            max_tokens: 64,
            seed: None,
        }
    }

    fn response(text: &str) -> LlmResponse {
        LlmResponse {
            text: text.into(),
            model: "m".into(),
            usage: Default::default(),
            cached: false,
        }
    }

    #[test]
    fn key_is_stable_and_ignores_max_tokens() {
        let a = request("hello");
        let mut b = request("hello");
        b.max_tokens = 4096;
        assert_eq!(cache_key(&a), cache_key(&b));
        assert_eq!(cache_key(&a).digest().len(), 64);

        let mut c = request("hello");
        c.seed = Some(1);
        assert_ne!(cache_key(&a), cache_key(&c));
        let mut d = request("hello");
        d.temperature = 0.1;
        assert_ne!(cache_key(&a), cache_key(&d));
        let mut e = request("hello");
        e.demonstrations = vec![Demonstration { input: "i".into(), output: "o".into() }];
        assert_ne!(cache_key(&a), cache_key(&e));
    }

    #[test]
    fn entries_shard_by_digest_prefix() {
        let dir = TempDir::new().unwrap();
        let cache = ResponseCache::new(dir.path());
        let req = request("shard me");
        let key = cache_key(&req);
        cache.put(&key, &req, &response("text")).unwrap();

        let expected = dir
            .path()
            .join(&key.digest()[..2])
            .join(format!("{}.json", key.digest()));
        assert!(expected.is_file());
        assert!(cache.contains(&key));
        assert_eq!(cache.get(&key).unwrap().unwrap().text, "text");
    }

    #[test]
    fn missing_entry_is_none() {
        let dir = TempDir::new().unwrap();
        let cache = ResponseCache::new(dir.path().join("never-created"));
        assert!(cache.get(&cache_key(&request("x"))).unwrap().is_none());
        assert_eq!(cache.stats().unwrap(), CacheStats::default());
    }

    #[test]
    fn corrupt_entry_reports_path() {
        let dir = TempDir::new().unwrap();
        let cache = ResponseCache::new(dir.path());
        let req = request("x");
        let key = cache_key(&req);
        cache.put(&key, &req, &response("ok")).unwrap();
        let path = dir
            .path()
            .join(&key.digest()[..2])
            .join(format!("{}.json", key.digest()));
        fs::write(&path, "{not json").unwrap();
        let err = cache.get(&key).unwrap_err();
        assert!(err.to_string().contains("corrupt cache entry"));
    }

    #[test]
    fn stats_and_gc() {
        let dir = TempDir::new().unwrap();
        let cache = ResponseCache::new(dir.path());
        for i in 0..5 {
            let req = request(&format!("q{i}"));
            cache.put(&cache_key(&req), &req, &response("r")).unwrap();
        }
        let stats = cache.stats().unwrap();
        assert_eq!(stats.entries, 5);
        assert!(stats.bytes > 0);

        let (removed, kept) = cache.gc(std::time::Duration::from_secs(3600)).unwrap();
        assert_eq!((removed, kept), (0, 5));
        let (removed, kept) = cache.gc(std::time::Duration::ZERO).unwrap();
        assert_eq!((removed, kept), (5, 0));
        assert_eq!(cache.stats().unwrap().entries, 0);
    }

    #[test]
    fn stored_entry_json_is_deterministic() {
        let dir_a = TempDir::new().unwrap();
        let dir_b = TempDir::new().unwrap();
        let req = request("same");
        let key = cache_key(&req);
        let cache_a = ResponseCache::new(dir_a.path());
        let cache_b = ResponseCache::new(dir_b.path());
        cache_a.put(&key, &req, &response("r")).unwrap();
        cache_b.put(&key, &req, &response("r")).unwrap();
        let path = |root: &TempDir| {
            root.path()
                .join(&key.digest()[..2])
                .join(format!("{}.json", key.digest()))
        };
        assert_eq!(
            fs::read(path(&dir_a)).unwrap(),
            fs::read(path(&dir_b)).unwrap()
        );
    }
}
