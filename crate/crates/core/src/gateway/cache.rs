use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Identity of one query: who answered, with which prompt, over which image bytes.
#[derive(Debug, Clone, Serialize)]
pub struct CacheKey<'a> {
    pub backend_id: &'a str,
    pub model: &'a str,
    pub prompt_hash: &'a str,
    pub content_hashes: &'a [String],
}

impl CacheKey<'_> {
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("cache key serializes");
        hex::encode(Sha256::digest(canonical))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub raw_response: String,
    pub attempts: u32,
}

/// Directory of JSON files named by the SHA-256 of their [`CacheKey`].
///
/// Reads are lock-free; writes go through a temp file and a rename under a mutex.
#[derive(Debug)]
pub struct ResponseCache {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(ResponseCache {
            root,
            write_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, digest: &str) -> PathBuf {
        self.root.join(&digest[..2]).join(format!("{digest}.json"))
    }

    pub fn get(&self, digest: &str) -> Option<CachedResponse> {
        let bytes = fs::read(self.path(digest)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn put(&self, digest: &str, response: &CachedResponse) -> Result<()> {
        let path = self.path(digest);
        let dir = path.parent().expect("cache path has a parent");
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(response)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
