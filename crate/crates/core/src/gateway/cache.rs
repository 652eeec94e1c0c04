//! Append-only on-disk response cache.
//!
//! One JSON object per line in `responses.jsonl`. Readers share an in-memory
//! index; appends are serialized through a single file handle.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

pub const CACHE_FILE: &str = "responses.jsonl";

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    response: String,
}

pub struct ResponseCache {
    path: PathBuf,
    index: RwLock<HashMap<String, String>>,
    writer: Mutex<File>,
}

impl ResponseCache {
    pub fn open(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let path = dir.join(CACHE_FILE);
        let mut index = HashMap::new();
        if path.exists() {
            for (lineno, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Entry>(&line) {
                    // First write wins; later duplicates are ignored.
                    Ok(e) => {
                        index.entry(e.key).or_insert(e.response);
                    }
                    Err(err) => log::warn!(
                        "skipping malformed cache line {} in {}: {err}",
                        lineno + 1,
                        path.display()
                    ),
                }
            }
        }
        let mut writer = OpenOptions::new().create(true).append(true).open(&path)?;
        // Terminate a torn trailing line so the next append starts clean.
        let len = writer.metadata()?.len();
        if len > 0 && !fs::read(&path)?.ends_with(b"\n") {
            writer.write_all(b"\n")?;
        }
        Ok(Self {
            path,
            index: RwLock::new(index),
            writer: Mutex::new(writer),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.index.read().unwrap().get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn put(&self, key: &str, response: &str) -> std::io::Result<()> {
        let mut writer = self.writer.lock().unwrap();
        {
            let mut index = self.index.write().unwrap();
            if index.contains_key(key) {
                return Ok(());
            }
            index.insert(key.to_string(), response.to_string());
        }
        let mut line = serde_json::to_string(&Entry {
            key: key.to_string(),
            response: response.to_string(),
        })
        .expect("cache entry serializes");
        line.push('\n');
        writer.write_all(line.as_bytes())?;
        writer.flush()
    }
}
