//! Dataset artifacts: frozen-backbone embeddings, the classifier head that
//! consumed them, and the binary concept-presence matrix.
//!
//! Embeddings are ingested as NDJSON, one record per line, with an optional
//! leading `{"meta": {...}}` line. Record order in the file is the canonical
//! row order for every matrix derived from the dataset.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::json;
use crate::linalg::{self, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::UnknownSplit(other.to_string())),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub split: Split,
    pub label: usize,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    records: Vec<Record>,
    dim: usize,
    num_classes: usize,
    baseline: Vec<f64>,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    split: String,
    label: i64,
    embedding: Vec<f64>,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    #[serde(default)]
    dim: Option<usize>,
    #[serde(default)]
    num_classes: Option<usize>,
    #[serde(default)]
    baseline: Option<Vec<f64>>,
}

impl EmbeddingDataset {
    /// Validate and assemble a dataset. `num_classes` and `baseline` default
    /// to `max(label) + 1` and the zero vector.
    pub fn new(
        records: Vec<Record>,
        num_classes: Option<usize>,
        baseline: Option<Vec<f64>>,
    ) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyDataset)?;
        let dim = first.embedding.len();
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                id: first.id.clone(),
                expected: 1,
                got: 0,
            });
        }
        Self::check_records(&records, dim)?;
        let max_label = records.iter().map(|r| r.label).max().unwrap_or(0);
        let num_classes = num_classes.unwrap_or(max_label + 1);
        if let Some(r) = records.iter().find(|r| r.label >= num_classes) {
            return Err(Error::LabelOutOfRange {
                id: r.id.clone(),
                label: r.label,
                num_classes,
            });
        }
        let baseline = baseline.unwrap_or_else(|| vec![0.0; dim]);
        if baseline.len() != dim {
            return Err(Error::DimensionMismatch {
                id: "<baseline>".into(),
                expected: dim,
                got: baseline.len(),
            });
        }
        Ok(Self {
            records,
            dim,
            num_classes,
            baseline,
        })
    }

    fn check_records(records: &[Record], dim: usize) -> Result<()> {
        let mut seen = HashSet::new();
        for r in records {
            if r.embedding.len() != dim {
                return Err(Error::DimensionMismatch {
                    id: r.id.clone(),
                    expected: dim,
                    got: r.embedding.len(),
                });
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let lines = json::ndjson_lines(path)?;
        Self::parse_lines(&lines)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let lines: Vec<(usize, String)> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i + 1, l.to_string()))
            .collect();
        Self::parse_lines(&lines)
    }

    fn parse_lines(lines: &[(usize, String)]) -> Result<Self> {
        let mut meta: Option<Meta> = None;
        let mut records = Vec::with_capacity(lines.len());
        for (idx, (line_no, line)) in lines.iter().enumerate() {
            let value: Value = json::parse_line(*line_no, line)?;
            if let Some(m) = value.get("meta") {
                if idx != 0 {
                    return Err(Error::Malformed {
                        line: *line_no,
                        message: "meta line must come first".into(),
                    });
                }
                meta = Some(serde_json::from_value(m.clone()).map_err(|e| Error::Malformed {
                    line: *line_no,
                    message: e.to_string(),
                })?);
                continue;
            }
            let raw: RawRecord = serde_json::from_value(value).map_err(|e| Error::Malformed {
                line: *line_no,
                message: e.to_string(),
            })?;
            if raw.label < 0 {
                return Err(Error::Malformed {
                    line: *line_no,
                    message: format!("negative label {}", raw.label),
                });
            }
            records.push(Record {
                split: raw.split.parse()?,
                id: raw.id,
                label: raw.label as usize,
                embedding: raw.embedding,
                text: raw.text,
            });
        }
        let meta = meta.unwrap_or(Meta {
            dim: None,
            num_classes: None,
            baseline: None,
        });
        if let (Some(dim), Some(first)) = (meta.dim, records.first()) {
            if first.embedding.len() != dim {
                return Err(Error::DimensionMismatch {
                    id: first.id.clone(),
                    expected: dim,
                    got: first.embedding.len(),
                });
            }
        }
        Self::new(records, meta.num_classes, meta.baseline)
    }

    /// Canonical NDJSON: a meta line followed by one record per line.
    pub fn to_canonical_string(&self) -> Result<String> {
        let meta = serde_json::json!({
            "meta": Meta {
                dim: Some(self.dim),
                num_classes: Some(self.num_classes),
                baseline: Some(self.baseline.clone()),
            }
        });
        let mut out = json::canonical_value(&meta);
        out.push('\n');
        out.push_str(&json::to_ndjson(&self.records)?);
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_canonical_string()?).map_err(|e| Error::io(path, e))
    }

    /// Hash of the canonical serialization, recorded in checkpoints.
    pub fn content_hash(&self) -> Result<String> {
        Ok(json::sha256_hex(self.to_canonical_string()?.as_bytes()))
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn baseline(&self) -> &[f64] {
        &self.baseline
    }

    pub fn split_view(&self, split: Split) -> SplitView<'_> {
        let indices = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect();
        SplitView {
            dataset: self,
            split,
            indices,
        }
    }

    pub fn index_of(&self) -> BTreeMap<&str, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect()
    }
}

/// Read-only view over the records of one split, in file order.
#[derive(Debug, Clone)]
pub struct SplitView<'a> {
    dataset: &'a EmbeddingDataset,
    split: Split,
    indices: Vec<usize>,
}

impl<'a> SplitView<'a> {
    pub fn split(&self) -> Split {
        self.split
    }

    pub fn dataset(&self) -> &'a EmbeddingDataset {
        self.dataset
    }

    /// Row indices into the parent dataset.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a Record> + '_ {
        self.indices.iter().map(|&i| &self.dataset.records[i])
    }

    pub fn require_non_empty(&self, what: &'static str) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptySplit(what))
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => linalg::sigmoid(x),
            Activation::Softplus => linalg::softplus(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = linalg::sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Softplus => linalg::sigmoid(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    /// `h × d`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// The frozen classification head `f_cls` mapping embeddings to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub kind: HeadKind,
    /// Output layer, `K × in` where `in` is `d` (linear) or the hidden width.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub hidden: Option<HiddenLayer>,
}

#[derive(Serialize, Deserialize)]
struct HiddenFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct HeadFile {
    kind: HeadKind,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden: Option<HiddenFile>,
}

impl ClassifierHead {
    pub fn linear(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        let head = Self {
            kind: HeadKind::Linear,
            weights,
            bias,
            hidden: None,
        };
        head.validate()?;
        Ok(head)
    }

    pub fn mlp(hidden: HiddenLayer, weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        let head = Self {
            kind: HeadKind::Mlp,
            weights,
            bias,
            hidden: Some(hidden),
        };
        head.validate()?;
        Ok(head)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.rows == 0 || self.bias.len() != self.weights.rows {
            return Err(Error::Shape(format!(
                "head output layer has {} rows but {} biases",
                self.weights.rows,
                self.bias.len()
            )));
        }
        match (&self.kind, &self.hidden) {
            (HeadKind::Linear, None) => Ok(()),
            (HeadKind::Mlp, Some(h)) => {
                if h.bias.len() != h.weights.rows || h.weights.rows != self.weights.cols {
                    return Err(Error::Shape(format!(
                        "hidden layer is {}x{} with {} biases, output layer expects width {}",
                        h.weights.rows,
                        h.weights.cols,
                        h.bias.len(),
                        self.weights.cols
                    )));
                }
                Ok(())
            }
            (HeadKind::Linear, Some(_)) => Err(Error::Shape("linear head with hidden layer".into())),
            (HeadKind::Mlp, None) => Err(Error::Shape("mlp head without hidden layer".into())),
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.hidden {
            Some(h) => h.weights.cols,
            None => self.weights.cols,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows
    }

    pub fn logits(&self, z: &[f64]) -> Vec<f64> {
        let mut out = match &self.hidden {
            None => self.weights.matvec(z),
            Some(h) => {
                let act: Vec<f64> = h
                    .weights
                    .matvec(z)
                    .iter()
                    .zip(&h.bias)
                    .map(|(p, b)| h.activation.apply(p + b))
                    .collect();
                self.weights.matvec(&act)
            }
        };
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: HeadFile = json::read_json(path)?;
        Self::from_file(file)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    fn from_file(file: HeadFile) -> Result<Self> {
        let head = Self {
            kind: file.kind,
            weights: Matrix::from_rows(&file.weights)?,
            bias: file.bias,
            hidden: file
                .hidden
                .map(|h| -> Result<HiddenLayer> {
                    Ok(HiddenLayer {
                        weights: Matrix::from_rows(&h.weights)?,
                        bias: h.bias,
                        activation: h.activation,
                    })
                })
                .transpose()?,
        };
        head.validate()?;
        Ok(head)
    }

    pub fn to_canonical_string(&self) -> Result<String> {
        json::to_canonical(&HeadFile {
            kind: self.kind,
            weights: self.weights.to_rows(),
            bias: self.bias.clone(),
            hidden: self.hidden.as_ref().map(|h| HiddenFile {
                weights: h.weights.to_rows(),
                bias: h.bias.clone(),
                activation: h.activation,
            }),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_canonical_string()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Binary `n × p` concept-presence matrix aligned to dataset order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptMatrix {
    concept_ids: Vec<u32>,
    rows: Vec<Vec<u8>>,
}

#[derive(Serialize, Deserialize)]
struct MatrixHeader {
    concepts: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct MatrixRow {
    id: String,
    presence: Vec<u8>,
}

impl ConceptMatrix {
    pub fn new(concept_ids: Vec<u32>, rows: Vec<Vec<u8>>) -> Result<Self> {
        let mut seen = HashSet::new();
        if let Some(dup) = concept_ids.iter().find(|c| !seen.insert(**c)) {
            return Err(Error::DuplicateId(dup.to_string()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != concept_ids.len() {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {}",
                    row.len(),
                    concept_ids.len()
                )));
            }
            if row.iter().any(|&v| v > 1) {
                return Err(Error::Shape(format!("row {i} has a non-binary entry")));
            }
        }
        Ok(Self { concept_ids, rows })
    }

    pub fn concept_ids(&self) -> &[u32] {
        &self.concept_ids
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_concepts(&self) -> usize {
        self.concept_ids.len()
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.rows[row][col]
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.rows[row]
    }

    pub fn position(&self, concept: u32) -> Option<usize> {
        self.concept_ids.iter().position(|&c| c == concept)
    }

    pub fn column(&self, col: usize) -> Vec<u8> {
        self.rows.iter().map(|r| r[col]).collect()
    }

    pub fn column_of(&self, concept: u32) -> Result<Vec<u8>> {
        let col = self.position(concept).ok_or(Error::UnknownConcept(concept))?;
        Ok(self.column(col))
    }

    /// Keep only the given concepts, in the given order.
    pub fn restrict(&self, concepts: &[u32]) -> Result<Self> {
        let cols: Vec<usize> = concepts
            .iter()
            .map(|&c| self.position(c).ok_or(Error::UnknownConcept(c)))
            .collect::<Result<_>>()?;
        let rows = self
            .rows
            .iter()
            .map(|r| cols.iter().map(|&j| r[j]).collect())
            .collect();
        Self::new(concepts.to_vec(), rows)
    }

    /// Keep only the given rows.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            concept_ids: self.concept_ids.clone(),
            rows: rows.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn to_ndjson(&self, dataset: &EmbeddingDataset) -> Result<String> {
        if dataset.len() != self.rows.len() {
            return Err(Error::Shape(format!(
                "matrix has {} rows, dataset has {}",
                self.rows.len(),
                dataset.len()
            )));
        }
        let mut out = json::to_canonical(&MatrixHeader {
            concepts: self.concept_ids.clone(),
        })?;
        out.push('\n');
        for (r, row) in dataset.records().iter().zip(&self.rows) {
            out.push_str(&json::to_canonical(&MatrixRow {
                id: r.id.clone(),
                presence: row.clone(),
            })?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path, dataset: &EmbeddingDataset) -> Result<()> {
        std::fs::write(path, self.to_ndjson(dataset)?).map_err(|e| Error::io(path, e))
    }

    /// Load a matrix file and reorder its rows to the dataset's record order.
    pub fn load(path: &Path, dataset: &EmbeddingDataset) -> Result<Self> {
        let lines = json::ndjson_lines(path)?;
        let (header_line, header) = lines.first().ok_or(Error::Malformed {
            line: 1,
            message: "empty concept matrix file".into(),
        })?;
        let header: MatrixHeader = json::parse_line(*header_line, header)?;
        let index = dataset.index_of();
        let mut rows: Vec<Option<Vec<u8>>> = vec![None; dataset.len()];
        for (line_no, line) in &lines[1..] {
            let row: MatrixRow = json::parse_line(*line_no, line)?;
            let i = *index.get(row.id.as_str()).ok_or_else(|| Error::Malformed {
                line: *line_no,
                message: format!("id '{}' not in dataset", row.id),
            })?;
            if rows[i].is_some() {
                return Err(Error::DuplicateId(row.id));
            }
            rows[i] = Some(row.presence);
        }
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                r.ok_or_else(|| {
                    Error::Shape(format!("no matrix row for record '{}'", dataset.records()[i].id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(header.concepts, rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConceptCount {
    pub concept_id: u32,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixReport {
    pub rows: usize,
    pub counts: Vec<ConceptCount>,
    pub all_zero: Vec<u32>,
    pub all_one: Vec<u32>,
    pub warnings: Vec<String>,
}

impl MatrixReport {
    /// Concepts whose column is constant over the rows checked.
    pub fn untrainable(&self) -> impl Iterator<Item = u32> + '_ {
        self.all_zero.iter().chain(&self.all_one).copied()
    }
}

pub fn validate_concept_matrix(
    matrix: &ConceptMatrix,
    dataset: &EmbeddingDataset,
) -> Result<MatrixReport> {
    if matrix.num_rows() != dataset.len() {
        return Err(Error::Shape(format!(
            "concept matrix has {} rows, dataset has {} records",
            matrix.num_rows(),
            dataset.len()
        )));
    }
    let n = matrix.num_rows();
    let mut report = MatrixReport {
        rows: n,
        counts: Vec::new(),
        all_zero: Vec::new(),
        all_one: Vec::new(),
        warnings: Vec::new(),
    };
    for (j, &id) in matrix.concept_ids().iter().enumerate() {
        let positives = (0..n).filter(|&i| matrix.get(i, j) == 1).count();
        report.counts.push(ConceptCount {
            concept_id: id,
            positives,
        });
        if positives == 0 {
            report.all_zero.push(id);
            report
                .warnings
                .push(format!("untrainable concept {id}: never present"));
        } else if positives == n {
            report.all_one.push(id);
            report
                .warnings
                .push(format!("untrainable concept {id}: always present"));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, split: Split, label: usize, emb: Vec<f64>) -> Record {
        Record {
            id: id.into(),
            split,
            label,
            embedding: emb,
            text: None,
        }
    }

    const THREE: &str = r#"{"id":"a","split":"train","label":0,"embedding":[1,2,3,4]}
{"id":"b","split":"dev","label":1,"embedding":[0,0,0,1]}
{"id":"c","split":"train","label":1,"embedding":[0.5,0.5,0.5,0.5]}
"#;

    #[test]
    fn loads_three_records() {
        let ds = EmbeddingDataset::parse_str(THREE).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.baseline(), &[0.0; 4]);
    }

    #[test]
    fn dimension_mismatch_names_record() {
        let text = format!("{THREE}{}\n", r#"{"id":"bad","split":"dev","label":0,"embedding":[1,2,3]}"#);
        match EmbeddingDataset::parse_str(&text) {
            Err(Error::DimensionMismatch { id, expected, got }) => {
                assert_eq!((id.as_str(), expected, got), ("bad", 4, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let err = EmbeddingDataset::parse_str("").unwrap_err();
        assert_eq!(err.to_string(), "empty dataset");
    }

    #[test]
    fn malformed_reports_line_number() {
        let text = "{\"id\":\"a\",\"split\":\"train\",\"label\":0,\"embedding\":[1]}\n{not json}\n";
        match EmbeddingDataset::parse_str(text) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_split_and_duplicate_id() {
        let text = r#"{"id":"a","split":"valid","label":0,"embedding":[1]}"#;
        assert!(matches!(
            EmbeddingDataset::parse_str(text),
            Err(Error::UnknownSplit(s)) if s == "valid"
        ));
        let text = "{\"id\":\"a\",\"split\":\"train\",\"label\":0,\"embedding\":[1]}\n{\"id\":\"a\",\"split\":\"dev\",\"label\":0,\"embedding\":[2]}";
        assert!(matches!(EmbeddingDataset::parse_str(text), Err(Error::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn meta_line_sets_classes_and_baseline() {
        let text = format!(
            "{}\n{THREE}",
            r#"{"meta":{"dim":4,"num_classes":3,"baseline":[1,1,1,1]}}"#
        );
        let ds = EmbeddingDataset::parse_str(&text).unwrap();
        assert_eq!(ds.num_classes(), 3);
        assert_eq!(ds.baseline(), &[1.0; 4]);
        let bad = format!("{}\n{THREE}", r#"{"meta":{"num_classes":1}}"#);
        assert!(matches!(
            EmbeddingDataset::parse_str(&bad),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn split_views_keep_file_order() {
        let ds = EmbeddingDataset::new(
            vec![
                rec("x", Split::Train, 0, vec![1.0]),
                rec("y", Split::Train, 0, vec![2.0]),
                rec("z", Split::Dev, 0, vec![3.0]),
                rec("w", Split::Dev, 0, vec![4.0]),
            ],
            None,
            None,
        )
        .unwrap();
        assert_eq!(ds.split_view(Split::Train).len(), 2);
        assert!(ds.split_view(Split::Test).is_empty());
        let dev = ds.split_view(Split::Dev);
        let ids: Vec<_> = dev.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["z", "w"]);
        let again: Vec<_> = dev.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, again);
    }

    #[test]
    fn canonical_round_trip_is_byte_stable() {
        let ds = EmbeddingDataset::parse_str(THREE).unwrap();
        let first = ds.to_canonical_string().unwrap();
        let again = EmbeddingDataset::parse_str(&first).unwrap();
        assert_eq!(again, ds);
        assert_eq!(again.to_canonical_string().unwrap(), first);
    }

    #[test]
    fn matrix_validation() {
        let ds = EmbeddingDataset::new(
            (0..4)
                .map(|i| rec(&format!("r{i}"), Split::Train, 0, vec![i as f64]))
                .collect(),
            None,
            None,
        )
        .unwrap();
        let m = ConceptMatrix::new(vec![7, 9], vec![vec![1, 0], vec![0, 0], vec![1, 0], vec![0, 0]])
            .unwrap();
        let report = validate_concept_matrix(&m, &ds).unwrap();
        assert_eq!(report.counts[0].positives, 2);
        assert_eq!(report.all_zero, vec![9]);
        assert!(report.warnings[0].contains("untrainable concept"));

        let short = ConceptMatrix::new(vec![7, 9], vec![vec![1, 0]; 3]).unwrap();
        assert!(matches!(validate_concept_matrix(&short, &ds), Err(Error::Shape(_))));
    }

    #[test]
    fn matrix_file_aligns_by_id() {
        let ds = EmbeddingDataset::parse_str(THREE).unwrap();
        let m = ConceptMatrix::new(vec![1, 2], vec![vec![1, 0], vec![0, 1], vec![1, 1]]).unwrap();
        let text = m.to_ndjson(&ds).unwrap();
        // shuffle data rows; loading must restore dataset order
        let mut lines: Vec<&str> = text.lines().collect();
        lines[1..].reverse();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ndjson");
        std::fs::write(&path, lines.join("\n")).unwrap();
        assert_eq!(ConceptMatrix::load(&path, &ds).unwrap(), m);
    }

    #[test]
    fn head_round_trip_and_logits() {
        let text = r#"{"kind":"mlp","weights":[[1,0],[0,1]],"bias":[0,1],
            "hidden":{"weights":[[1,1,0],[0,0,1]],"bias":[0,0],"activation":"tanh"}}"#;
        let head = ClassifierHead::from_json(text).unwrap();
        assert_eq!(head.input_dim(), 3);
        assert_eq!(head.num_classes(), 2);
        let l = head.logits(&[0.5, 0.5, 0.0]);
        assert!((l[0] - 1f64.tanh()).abs() < 1e-15);
        assert!((l[1] - 1.0).abs() < 1e-15);
        let back = ClassifierHead::from_json(&head.to_canonical_string().unwrap()).unwrap();
        assert_eq!(back, head);
        assert!(ClassifierHead::from_json(r#"{"kind":"linear","weights":[[1]],"bias":[0,1]}"#).is_err());
    }
}
