//! Topic extraction per text and naming of micro-concept clusters.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use tcbm_core::bank::{fallback_label, ConceptLabeler, MicroAnnotation};
use tcbm_core::data::EmbeddingDataset;

use crate::client::{ChatBackend, EndpointConfig};
use crate::error::{AnnotateError, Result};
use crate::parse::{parse_label, parse_topics};
use crate::prompt::{macro_prompt, micro_prompt};

/// One line of an annotation file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    pub topics: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

impl AnnotationRecord {
    pub fn to_annotation(&self) -> MicroAnnotation {
        MicroAnnotation::new(self.id.clone(), self.topics.iter().cloned())
    }
}

/// Cuts `text` to at most `budget` characters.
pub fn truncate(text: &str, budget: Option<usize>) -> (&str, bool) {
    match budget.and_then(|b| text.char_indices().nth(b)) {
        Some((end, _)) => (&text[..end], true),
        None => (text, false),
    }
}

fn annotate_one(id: &str, text: &str, backend: &dyn ChatBackend, cfg: &EndpointConfig) -> Result<AnnotationRecord> {
    let (text, truncated) = truncate(text, cfg.char_budget);
    if truncated {
        warn!("text '{id}' truncated to {} characters", text.chars().count());
    }
    let reply = backend
        .complete(&cfg.request(micro_prompt(text)))
        .map_err(|e| e.for_text(id))?;
    let parsed = parse_topics(&reply);
    if parsed.is_empty() && !reply.contains("Topics:") {
        warn!("completion for '{id}' has no topic list: {reply:?}");
    }
    let topics = MicroAnnotation::new(id, parsed).topics;
    Ok(AnnotationRecord {
        id: id.to_string(),
        topics,
        truncated,
    })
}

/// Annotates `(id, text)` pairs with at most `max_in_flight` requests
/// outstanding. Output order follows input order; the first failure aborts.
pub fn annotate_micro_concepts(
    texts: &[(String, String)],
    backend: &dyn ChatBackend,
    cfg: &EndpointConfig,
) -> Result<Vec<AnnotationRecord>> {
    cfg.validate()?;
    let next = AtomicUsize::new(0);
    let failed = AtomicUsize::new(usize::MAX);
    let slots: Vec<Mutex<Option<Result<AnnotationRecord>>>> = texts.iter().map(|_| Mutex::new(None)).collect();
    let workers = cfg.max_in_flight.min(texts.len()).max(1);
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= texts.len() || failed.load(Ordering::SeqCst) < i {
                    break;
                }
                let (id, text) = &texts[i];
                let out = annotate_one(id, text, backend, cfg);
                if out.is_err() {
                    failed.fetch_min(i, Ordering::SeqCst);
                }
                *slots[i].lock().expect("slot lock") = Some(out);
            });
        }
    });
    let mut records = Vec::with_capacity(texts.len());
    for slot in slots {
        match slot.into_inner().expect("slot lock") {
            Some(r) => records.push(r?),
            None => break,
        }
    }
    info!("annotated {} texts", records.len());
    Ok(records)
}

/// Texts of every record in `dataset`; records without text are an error.
pub fn dataset_texts(dataset: &EmbeddingDataset) -> Result<Vec<(String, String)>> {
    dataset
        .records()
        .iter()
        .map(|r| match &r.text {
            Some(t) => Ok((r.id.clone(), t.clone())),
            None => Err(AnnotateError::Config(format!("record '{}' has no text to annotate", r.id))),
        })
        .collect()
}

/// The endpoint's name for a cluster, or `cluster-<index>` when the reply
/// has no usable label.
pub fn label_macro_concept(
    samples: &[String],
    cluster_index: usize,
    backend: &dyn ChatBackend,
    cfg: &EndpointConfig,
) -> Result<String> {
    let reply = backend.complete(&cfg.request(macro_prompt(samples)))?;
    Ok(match parse_label(&reply) {
        Some(label) => label,
        None => {
            warn!("no label in completion for cluster {cluster_index}: {reply:?}");
            fallback_label(cluster_index)
        }
    })
}

/// A [`ConceptLabeler`] that asks a chat endpoint.
pub struct EndpointLabeler<'a> {
    pub backend: &'a dyn ChatBackend,
    pub config: &'a EndpointConfig,
}

impl ConceptLabeler for EndpointLabeler<'_> {
    fn label(
        &self,
        cluster_index: usize,
        samples: &[String],
    ) -> std::result::Result<String, Box<dyn std::error::Error + Send + Sync>> {
        Ok(label_macro_concept(samples, cluster_index, self.backend, self.config)?)
    }
}

pub fn save_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let text = tcbm_core::json::to_ndjson(records)?;
    std::fs::write(path, text).map_err(|e| AnnotateError::Io(path.to_path_buf(), e))
}

/// Reads an annotation file, checking ids against `dataset` when given.
pub fn load_annotations(path: &Path, dataset: Option<&EmbeddingDataset>) -> Result<Vec<MicroAnnotation>> {
    let known = dataset.map(|d| d.index_of());
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line_no, line) in tcbm_core::json::ndjson_lines(path)? {
        let rec: AnnotationRecord = serde_json::from_str(&line).map_err(|e| AnnotateError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        if known.as_ref().is_some_and(|k| !k.contains_key(rec.id.as_str())) {
            return Err(AnnotateError::UnknownId(rec.id));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(AnnotateError::DuplicateId(rec.id));
        }
        out.push(rec.to_annotation());
    }
    Ok(out)
}
