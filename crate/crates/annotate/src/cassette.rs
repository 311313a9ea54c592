//! Record/replay of chat completions keyed by request hash.
//!
//! A cassette is NDJSON, one `{"hash", "request", "response"}` object per
//! line. Replay never touches the network; a request missing from the
//! cassette is an error. Recording forwards to another backend and appends
//! each new exchange.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::client::{ChatBackend, ChatRequest};
use crate::error::{AnnotateError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    request: Option<ChatRequest>,
    response: String,
}

fn read_entries(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (line_no, line) in tcbm_core::json::ndjson_lines(path)? {
        let e: Entry = serde_json::from_str(&line).map_err(|source| AnnotateError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: source.to_string(),
        })?;
        out.insert(e.hash, e.response);
    }
    Ok(out)
}

pub struct Replay {
    path: PathBuf,
    entries: BTreeMap<String, String>,
}

impl Replay {
    pub fn open(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            entries: read_entries(path)?,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChatBackend for Replay {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let hash = request.hash();
        self.entries.get(&hash).cloned().ok_or_else(|| AnnotateError::CassetteMiss {
            path: self.path.clone(),
            hash,
        })
    }
}

pub struct Recorder<B> {
    inner: B,
    path: PathBuf,
    known: Mutex<(BTreeMap<String, String>, File)>,
}

impl<B: ChatBackend> Recorder<B> {
    /// Appends to `path`, creating it if needed. Requests already on the
    /// cassette are answered from it.
    pub fn open(path: &Path, inner: B) -> Result<Self> {
        let known = if path.exists() { read_entries(path)? } else { BTreeMap::new() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| AnnotateError::Io(path.to_path_buf(), e))?;
        Ok(Self {
            inner,
            path: path.to_path_buf(),
            known: Mutex::new((known, file)),
        })
    }
}

impl<B: ChatBackend> ChatBackend for Recorder<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let hash = request.hash();
        if let Some(hit) = self.known.lock().expect("cassette lock").0.get(&hash) {
            return Ok(hit.clone());
        }
        let response = self.inner.complete(request)?;
        let mut guard = self.known.lock().expect("cassette lock");
        if !guard.0.contains_key(&hash) {
            let line = serde_json::to_string(&Entry {
                hash: hash.clone(),
                request: Some(request.clone()),
                response: response.clone(),
            })
            .expect("entry serializes");
            writeln!(guard.1, "{line}").map_err(|e| AnnotateError::Io(self.path.clone(), e))?;
            guard.0.insert(hash, response.clone());
        }
        Ok(response)
    }
}
