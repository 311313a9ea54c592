//! Concept bank construction and bottleneck seeding.
//!
//! Micro concepts (topic strings per text) are embedded upstream, reduced,
//! and clustered into macro concepts; each macro concept is labeled from the
//! micro concepts nearest its centroid. The bank also owns the co-occurrence
//! grouping used to seed and grow the bottleneck layer.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::cluster::{self, HdbscanParams};
use crate::data::{ConceptMatrix, EmbeddingDataset};
use crate::error::{Error, Result};
use crate::importance::ConceptScore;
use crate::json;

/// Number of micro concepts shown to the labeler per macro concept.
pub const LABEL_SAMPLES: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroAnnotation {
    pub id: String,
    pub topics: Vec<String>,
}

impl MicroAnnotation {
    /// Trims, lowercases and deduplicates topics, keeping first occurrences.
    pub fn new(id: impl Into<String>, topics: impl IntoIterator<Item = String>) -> Self {
        let mut seen = HashSet::new();
        let topics = topics
            .into_iter()
            .map(|t| t.trim().to_lowercase())
            .filter(|t| !t.is_empty() && seen.insert(t.clone()))
            .collect();
        Self { id: id.into(), topics }
    }
}

/// Topics per dataset row; rows without an annotation get no topics.
pub fn align_annotations(dataset: &EmbeddingDataset, annotations: &[MicroAnnotation]) -> Vec<Vec<String>> {
    let by_id: BTreeMap<&str, &MicroAnnotation> =
        annotations.iter().map(|a| (a.id.as_str(), a)).collect();
    dataset
        .records()
        .iter()
        .map(|r| by_id.get(r.id.as_str()).map(|a| a.topics.clone()).unwrap_or_default())
        .collect()
}

/// Sentence embeddings of micro-concept strings, keyed in sorted order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MicroConceptEmbeddings {
    entries: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct MicroEmbeddingRow {
    micro: String,
    embedding: Vec<f64>,
}

impl MicroConceptEmbeddings {
    pub fn new(entries: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let dim = entries.values().next().map_or(0, Vec::len);
        if let Some((k, v)) = entries.iter().find(|(_, v)| v.len() != dim || v.is_empty()) {
            return Err(Error::DimensionMismatch {
                id: k.clone(),
                expected: dim,
                got: v.len(),
            });
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (line_no, line) in json::ndjson_lines(path)? {
            let row: MicroEmbeddingRow = json::parse_line(line_no, &line)?;
            let key = row.micro.trim().to_lowercase();
            if entries.insert(key.clone(), row.embedding).is_some() {
                return Err(Error::DuplicateId(key));
            }
        }
        Self::new(entries)
    }

    pub fn get(&self, micro: &str) -> Option<&[f64]> {
        self.entries.get(micro).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Every annotated micro concept must have an embedding.
    pub fn check_covers(&self, annotations: &[MicroAnnotation]) -> Result<()> {
        for a in annotations {
            if let Some(t) = a.topics.iter().find(|t| !self.entries.contains_key(t.as_str())) {
                return Err(Error::Config(format!(
                    "no embedding for micro concept '{t}' (text '{}')",
                    a.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Pca,
    /// Coordinates are used as given, e.g. a UMAP projection made upstream.
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MicroClusterParams {
    pub reduce_dims: usize,
    pub reduction: Reduction,
    pub min_cluster_size: usize,
}

impl Default for MicroClusterParams {
    fn default() -> Self {
        Self {
            reduce_dims: 5,
            reduction: Reduction::Pca,
            min_cluster_size: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroClusters {
    /// Micro concepts in sorted order, aligned with `reduced` and `labels`.
    pub micro: Vec<String>,
    pub reduced: Vec<Vec<f64>>,
    pub clusters: Vec<Vec<usize>>,
    pub noise: Vec<usize>,
}

impl MicroClusters {
    pub fn discard_rate(&self) -> f64 {
        if self.micro.is_empty() {
            0.0
        } else {
            self.noise.len() as f64 / self.micro.len() as f64
        }
    }
}

pub fn cluster_micro_concepts(
    embeds: &MicroConceptEmbeddings,
    params: &MicroClusterParams,
) -> Result<MicroClusters> {
    if embeds.len() < params.min_cluster_size {
        return Err(Error::TooFew {
            what: "distinct micro concepts",
            needed: params.min_cluster_size,
            got: embeds.len(),
        });
    }
    let micro: Vec<String> = embeds.keys().cloned().collect();
    let rows: Vec<Vec<f64>> = micro.iter().map(|m| embeds.get(m).unwrap().to_vec()).collect();
    let reduced = match params.reduction {
        Reduction::Pca => cluster::pca(&rows, params.reduce_dims)?,
        Reduction::Precomputed => {
            // still reject a degenerate input
            cluster::pca(&rows, usize::MAX)?;
            rows
        }
    };
    let clustering = cluster::hdbscan(
        reduced.len(),
        |i, j| cluster::euclidean(&reduced[i], &reduced[j]),
        &HdbscanParams::new(params.min_cluster_size),
    )?;
    let out = MicroClusters {
        micro,
        clusters: clustering.members(),
        noise: clustering.noise(),
        reduced,
    };
    info!(
        "{} micro concepts -> {} clusters, discard rate {:.3}",
        out.micro.len(),
        out.clusters.len(),
        out.discard_rate()
    );
    Ok(out)
}

/// Names a macro concept from a sample of its micro concepts. An error
/// aborts bank construction; labelers fall back to [`fallback_label`]
/// themselves when a reply is merely unusable.
pub trait ConceptLabeler {
    fn label(
        &self,
        cluster_index: usize,
        samples: &[String],
    ) -> std::result::Result<String, Box<dyn std::error::Error + Send + Sync>>;
}

/// Labels every cluster `cluster-<index>`.
pub struct IndexLabeler;

impl ConceptLabeler for IndexLabeler {
    fn label(
        &self,
        cluster_index: usize,
        _samples: &[String],
    ) -> std::result::Result<String, Box<dyn std::error::Error + Send + Sync>> {
        Ok(fallback_label(cluster_index))
    }
}

pub fn fallback_label(index: usize) -> String {
    format!("cluster-{index}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroConcept {
    pub id: u32,
    pub label: String,
    pub members: Vec<String>,
    pub centroid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptBank {
    pub concepts: Vec<MacroConcept>,
    pub matrix: ConceptMatrix,
}

#[derive(Serialize, Deserialize)]
struct BankFile {
    concepts: Vec<MacroConcept>,
}

impl ConceptBank {
    pub fn concept(&self, id: u32) -> Option<&MacroConcept> {
        self.concepts.iter().find(|c| c.id == id)
    }

    pub fn labels(&self) -> BTreeMap<u32, String> {
        self.concepts.iter().map(|c| (c.id, c.label.clone())).collect()
    }

    pub fn concepts_to_json(&self) -> Result<String> {
        json::to_canonical(&BankFile {
            concepts: self.concepts.clone(),
        })
    }

    pub fn save(&self, bank_path: &Path, matrix_path: &Path, dataset: &EmbeddingDataset) -> Result<()> {
        let mut text = self.concepts_to_json()?;
        text.push('\n');
        std::fs::write(bank_path, text).map_err(|e| Error::io(bank_path, e))?;
        self.matrix.save(matrix_path, dataset)
    }

    pub fn load(bank_path: &Path, matrix_path: &Path, dataset: &EmbeddingDataset) -> Result<Self> {
        let file: BankFile = json::read_json(bank_path)?;
        let matrix = ConceptMatrix::load(matrix_path, dataset)?;
        let bank_ids: BTreeSet<u32> = file.concepts.iter().map(|c| c.id).collect();
        if bank_ids.len() != file.concepts.len() {
            return Err(Error::Config("duplicate concept id in bank".into()));
        }
        if let Some(id) = matrix.concept_ids().iter().find(|id| !bank_ids.contains(id)) {
            return Err(Error::UnknownConcept(*id));
        }
        Ok(Self {
            concepts: file.concepts,
            matrix,
        })
    }
}

/// One macro concept per micro cluster, labeled from the `LABEL_SAMPLES`
/// members nearest the centroid, plus the presence matrix over `dataset`.
pub fn build_macro_bank(
    clusters: &MicroClusters,
    annotations: &[MicroAnnotation],
    dataset: &EmbeddingDataset,
    labeler: &dyn ConceptLabeler,
) -> Result<ConceptBank> {
    if clusters.clusters.is_empty() {
        return Err(Error::TooFew {
            what: "micro-concept clusters",
            needed: 1,
            got: 0,
        });
    }
    if clusters.clusters.len() >= clusters.micro.len() {
        return Err(Error::Config(format!(
            "{} macro concepts from {} micro concepts",
            clusters.clusters.len(),
            clusters.micro.len()
        )));
    }
    let mut concepts = Vec::with_capacity(clusters.clusters.len());
    let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
    for (index, members) in clusters.clusters.iter().enumerate() {
        let dims = clusters.reduced[members[0]].len();
        let mut centroid = vec![0.0; dims];
        for &m in members {
            for (c, x) in centroid.iter_mut().zip(&clusters.reduced[m]) {
                *c += x / members.len() as f64;
            }
        }
        let mut by_distance: Vec<(f64, usize)> = members
            .iter()
            .map(|&m| (cluster::euclidean(&clusters.reduced[m], &centroid), m))
            .collect();
        by_distance.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let samples: Vec<String> = by_distance
            .iter()
            .take(LABEL_SAMPLES)
            .map(|&(_, m)| clusters.micro[m].clone())
            .collect();
        let label = labeler
            .label(index, &samples)
            .map_err(|source| Error::Labeler { cluster: index, source })?;
        for &m in members {
            owner.insert(clusters.micro[m].as_str(), index);
        }
        concepts.push(MacroConcept {
            id: index as u32,
            label,
            members: members.iter().map(|&m| clusters.micro[m].clone()).collect(),
            centroid,
        });
    }
    let topics = align_annotations(dataset, annotations);
    let rows = topics
        .iter()
        .map(|ts| {
            let mut row = vec![0u8; concepts.len()];
            for t in ts {
                if let Some(&j) = owner.get(t.as_str()) {
                    row[j] = 1;
                }
            }
            row
        })
        .collect();
    let matrix = ConceptMatrix::new(concepts.iter().map(|c| c.id).collect(), rows)?;
    Ok(ConceptBank { concepts, matrix })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CooccurrenceParams {
    pub min_cluster_size: usize,
    pub allow_single_cluster: bool,
}

impl Default for CooccurrenceParams {
    fn default() -> Self {
        Self {
            min_cluster_size: 2,
            allow_single_cluster: true,
        }
    }
}

/// Groups of concept ids whose presence columns co-occur (HDBSCAN over
/// Jaccard distance). Noise concepts become singleton groups after the
/// clustered ones.
pub fn cooccurrence_clusters(matrix: &ConceptMatrix, params: &CooccurrenceParams) -> Result<Vec<Vec<u32>>> {
    let p = matrix.num_concepts();
    if p < 2 {
        return Err(Error::TooFew {
            what: "concepts for co-occurrence clustering",
            needed: 2,
            got: p,
        });
    }
    // Cluster in id order so tied distances resolve the same way whatever
    // the column order of the matrix.
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by_key(|&j| matrix.concept_ids()[j]);
    let columns: Vec<Vec<u8>> = order.iter().map(|&j| matrix.column(j)).collect();
    let ids: Vec<u32> = order.iter().map(|&j| matrix.concept_ids()[j]).collect();
    if p < params.min_cluster_size {
        return Ok(ids.iter().map(|&c| vec![c]).collect());
    }
    let hp = HdbscanParams {
        min_cluster_size: params.min_cluster_size,
        min_samples: None,
        allow_single_cluster: params.allow_single_cluster,
    };
    let clustering = cluster::hdbscan(p, |i, j| cluster::jaccard(&columns[i], &columns[j]), &hp)?;
    let mut groups: Vec<Vec<u32>> = clustering
        .members()
        .into_iter()
        .map(|m| m.into_iter().map(|j| ids[j]).collect())
        .collect();
    groups.extend(clustering.noise().into_iter().map(|j| vec![ids[j]]));
    Ok(groups)
}

/// Fraction of rows with at least one selected concept present.
pub fn coverage(matrix: &ConceptMatrix, selected: &[u32]) -> f64 {
    if matrix.num_rows() == 0 {
        return 0.0;
    }
    let cols: Vec<usize> = selected.iter().filter_map(|&c| matrix.position(c)).collect();
    let covered = (0..matrix.num_rows())
        .filter(|&i| cols.iter().any(|&j| matrix.get(i, j) == 1))
        .count();
    covered as f64 / matrix.num_rows() as f64
}

fn score_map(scores: &[ConceptScore]) -> BTreeMap<u32, f64> {
    scores.iter().map(|s| (s.concept_id, s.combined)).collect()
}

/// Group members that have a score, best first (ties by id).
fn ranked_groups(groups: &[Vec<u32>], scores: &BTreeMap<u32, f64>) -> Vec<Vec<(u32, f64)>> {
    groups
        .iter()
        .map(|g| {
            let mut ranked: Vec<(u32, f64)> = g
                .iter()
                .filter_map(|c| scores.get(c).map(|&s| (*c, s)))
                .collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            ranked
        })
        .filter(|g| !g.is_empty())
        .collect()
}

fn by_score_desc(a: &(u32, f64), b: &(u32, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CblInit {
    pub selected: Vec<u32>,
    pub coverage: f64,
    pub reached_target: bool,
}

/// Round-robin over co-occurrence groups: each round offers every group's
/// best unused concept, groups visited in descending score of that concept.
/// Stops at the first selection whose coverage of `matrix` rows reaches
/// `coverage_target`. Only scored concepts are eligible.
pub fn init_cbl(
    scores: &[ConceptScore],
    groups: &[Vec<u32>],
    matrix: &ConceptMatrix,
    coverage_target: f64,
) -> Result<CblInit> {
    let scores = score_map(scores);
    let ranked = ranked_groups(groups, &scores);
    if ranked.is_empty() {
        return Err(Error::TooFew {
            what: "scored concepts",
            needed: 1,
            got: 0,
        });
    }
    let cols: BTreeMap<u32, usize> = ranked
        .iter()
        .flatten()
        .map(|&(c, _)| matrix.position(c).map(|j| (c, j)).ok_or(Error::UnknownConcept(c)))
        .collect::<Result<_>>()?;
    let n = matrix.num_rows();
    let mut covered = vec![false; n];
    let mut covered_count = 0usize;
    let mut selected = Vec::new();
    let rounds = ranked.iter().map(Vec::len).max().unwrap_or(0);
    for round in 0..rounds {
        let mut offers: Vec<(u32, f64)> = ranked.iter().filter_map(|g| g.get(round).copied()).collect();
        offers.sort_by(by_score_desc);
        for (c, _) in offers {
            selected.push(c);
            let j = cols[&c];
            for (i, cov) in covered.iter_mut().enumerate() {
                if !*cov && matrix.get(i, j) == 1 {
                    *cov = true;
                    covered_count += 1;
                }
            }
            let frac = if n == 0 { 0.0 } else { covered_count as f64 / n as f64 };
            if frac >= coverage_target {
                return Ok(CblInit {
                    selected,
                    coverage: frac,
                    reached_target: true,
                });
            }
        }
    }
    let frac = if n == 0 { 0.0 } else { covered_count as f64 / n as f64 };
    warn!(
        "coverage target {coverage_target} unreachable: all {} concepts give {frac:.4}",
        selected.len()
    );
    Ok(CblInit {
        selected,
        coverage: frac,
        reached_target: false,
    })
}

/// Each group's best concept not yet in `current`, best first. Empty when
/// every scored concept is already used.
pub fn next_concepts(groups: &[Vec<u32>], scores: &[ConceptScore], current: &[u32]) -> Vec<u32> {
    let scores = score_map(scores);
    let used: BTreeSet<u32> = current.iter().copied().collect();
    let mut picks: Vec<(u32, f64)> = ranked_groups(groups, &scores)
        .into_iter()
        .filter_map(|g| g.into_iter().find(|(c, _)| !used.contains(c)))
        .collect();
    picks.sort_by(by_score_desc);
    picks.into_iter().map(|(c, _)| c).collect()
}
