//! Content-addressed store of completion responses, used to resume
//! interrupted generation jobs.
//!
//! Layout: `{dir}/{first two hex chars of key}/{key}.json`. Entries are
//! written to a temporary file in the same directory and renamed into place,
//! so a crash never leaves a partial entry behind.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::llm::{FinishReason, ModelSettings};

/// Stable hex SHA-256 over the prompt, the model settings and the call index.
///
/// The call index keeps repeated identical prompts (e.g. zero-shot generation)
/// from collapsing onto a single cached sample.
pub fn cache_key(prompt_text: &str, settings: &ModelSettings, call_index: u64) -> String {
    let canonical = serde_json::json!([
        "v1",
        prompt_text,
        settings.model,
        settings.max_tokens,
        settings.temperature,
        call_index,
    ]);
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    hex::encode(digest)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub text: String,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        let shard = key.get(..2).unwrap_or("__");
        self.dir.join(shard).join(format!("{key}.json"))
    }

    /// Missing or unreadable entries are treated as misses.
    pub fn get(&self, key: &str) -> Option<CachedResponse> {
        let bytes = fs::read(self.path_for(key)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn put(&self, key: &str, response: &CachedResponse) -> io::Result<()> {
        let path = self.path_for(key);
        let parent = path.parent().expect("entry path has a shard directory");
        fs::create_dir_all(parent)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
        serde_json::to_writer(&mut tmp, response)?;
        tmp.write_all(b"\n")?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        walk_json(&self.dir)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn walk_json(dir: &Path) -> usize {
    let Ok(entries) = fs::read_dir(dir) else {
        return 0;
    };
    entries
        .flatten()
        .map(|e| {
            let path = e.path();
            if path.is_dir() {
                walk_json(&path)
            } else {
                usize::from(path.extension().is_some_and(|x| x == "json"))
            }
        })
        .sum()
}
