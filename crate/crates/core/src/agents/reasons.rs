//! Reason cache keyed by (model, question id, choice).
//!
//! With a backing file, entries are appended as JSON lines and reloaded on
//! open, so repeated grid runs do not regenerate justifications.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::dataset::Label;

#[derive(Serialize, Deserialize)]
struct Entry {
    model: String,
    question_id: String,
    choice: Label,
    reason: String,
}

type Key = (String, String, Label);

#[derive(Debug, Default)]
pub struct ReasonCache {
    entries: Mutex<HashMap<Key, String>>,
    path: Option<PathBuf>,
}

impl ReasonCache {
    pub fn in_memory() -> ReasonCache {
        ReasonCache::default()
    }

    pub fn open(path: &Path) -> Result<ReasonCache, AgentError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path)
                .map_err(|e| AgentError::Config(format!("reason cache {}: {e}", path.display())))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| AgentError::Config(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: Entry = serde_json::from_str(&line)
                    .map_err(|e| AgentError::Config(format!("reason cache {}: {e}", path.display())))?;
                entries.insert((e.model, e.question_id, e.choice), e.reason);
            }
        }
        Ok(ReasonCache {
            entries: Mutex::new(entries),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn get(&self, model: &str, question_id: &str, choice: Label) -> Option<String> {
        self.entries
            .lock()
            .expect("reason cache poisoned")
            .get(&(model.to_string(), question_id.to_string(), choice))
            .cloned()
    }

    /// Returns the cached reason or computes, stores and returns a new one.
    pub fn get_or_insert_with(
        &self,
        model: &str,
        question_id: &str,
        choice: Label,
        generate: impl FnOnce() -> Result<String, AgentError>,
    ) -> Result<String, AgentError> {
        if let Some(hit) = self.get(model, question_id, choice) {
            return Ok(hit);
        }
        let reason = generate()?;
        let mut entries = self.entries.lock().expect("reason cache poisoned");
        let key = (model.to_string(), question_id.to_string(), choice);
        // a concurrent writer may have won; keep the first value
        if let Some(existing) = entries.get(&key) {
            return Ok(existing.clone());
        }
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| AgentError::Config(format!("reason cache {}: {e}", path.display())))?;
            let line = serde_json::to_string(&Entry {
                model: model.to_string(),
                question_id: question_id.to_string(),
                choice,
                reason: reason.clone(),
            })
            .expect("entry serializes");
            writeln!(file, "{line}").map_err(|e| AgentError::Config(e.to_string()))?;
        }
        entries.insert(key, reason.clone());
        Ok(reason)
    }
}
