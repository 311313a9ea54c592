//! Evaluation metrics, intervention curves and global explanations.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ConceptMatrix, EmbeddingDataset, Split, SplitView};
use crate::error::{Error, Result};
use crate::geometry::f1_score;
use crate::json;
use crate::linalg::{argmax, dot, norm, sigmoid};
use crate::model::TcbmModel;

/// Concept activations above this (after squashing) count as detected.
pub const DETECTION_THRESHOLD: f64 = 0.5;

pub const DEFAULT_TOP_Q: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    /// Percent of correct class predictions.
    pub acc: f64,
    /// Macro-averaged concept-detection F1, in percent.
    pub concept_f1: f64,
    pub concept_f1_micro: f64,
    pub num_concepts: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diversity: Option<f64>,
}

impl EvalReport {
    /// `%ACC  %c  #c` row.
    pub fn summary_row(&self) -> String {
        format!("{:.1}\t{:.1}\t{}", self.acc, self.concept_f1, self.num_concepts)
    }
}

fn percent(correct: usize, n: usize) -> f64 {
    100.0 * correct as f64 / n as f64
}

/// Percent accuracy of `model` on the rows of `view`.
pub fn accuracy(model: &TcbmModel, view: &SplitView<'_>) -> Result<f64> {
    view.require_non_empty("evaluation")?;
    let mut correct = 0;
    for r in view.iter() {
        if model.predict(&r.embedding)? == r.label {
            correct += 1;
        }
    }
    Ok(percent(correct, view.len()))
}

fn truth_for(model: &TcbmModel, matrix: &ConceptMatrix, dataset: &EmbeddingDataset) -> Result<ConceptMatrix> {
    if matrix.num_rows() != dataset.len() {
        return Err(Error::Shape(format!(
            "concept matrix has {} rows, dataset {}",
            matrix.num_rows(),
            dataset.len()
        )));
    }
    matrix.restrict(&model.concept_ids)
}

pub fn evaluate(
    model: &TcbmModel,
    dataset: &EmbeddingDataset,
    matrix: &ConceptMatrix,
    split: Split,
) -> Result<EvalReport> {
    let view = dataset.split_view(split);
    view.require_non_empty("evaluation")?;
    let truth = truth_for(model, matrix, dataset)?;
    let p = model.num_concepts();
    let mut predicted = vec![Vec::with_capacity(view.len()); p];
    let mut actual = vec![Vec::with_capacity(view.len()); p];
    let mut correct = 0;
    for (&i, r) in view.indices().iter().zip(view.iter()) {
        let out = model.forward(&r.embedding)?;
        if argmax(&out.logits) == r.label {
            correct += 1;
        }
        for j in 0..p {
            predicted[j].push(u8::from(sigmoid(out.concept_logits[j]) > DETECTION_THRESHOLD));
            actual[j].push(truth.get(i, j));
        }
    }
    let macro_f1 = if p == 0 {
        0.0
    } else {
        (0..p).map(|j| f1_score(&predicted[j], &actual[j])).sum::<f64>() / p as f64
    };
    let flat_pred: Vec<u8> = predicted.concat();
    let flat_truth: Vec<u8> = actual.concat();
    Ok(EvalReport {
        split,
        acc: percent(correct, view.len()),
        concept_f1: 100.0 * macro_f1,
        concept_f1_micro: 100.0 * f1_score(&flat_pred, &flat_truth),
        num_concepts: p,
        diversity: None,
    })
}

/// One minus the mean pairwise cosine similarity.
pub fn diversity(embeddings: &[Vec<f64>]) -> Result<f64> {
    let k = embeddings.len();
    if k < 2 {
        return Err(Error::TooFew {
            what: "label embeddings for diversity",
            needed: 2,
            got: k,
        });
    }
    let norms: Vec<f64> = embeddings.iter().map(|e| norm(e)).collect();
    if norms.iter().any(|&n| n == 0.0) {
        return Err(Error::ZeroNorm("label embedding"));
    }
    let mut sum = 0.0;
    for a in 0..k {
        for b in a + 1..k {
            if embeddings[a].len() != embeddings[b].len() {
                return Err(Error::Shape("label embeddings differ in dimension".into()));
            }
            sum += dot(&embeddings[a], &embeddings[b]) / (norms[a] * norms[b]);
        }
    }
    Ok(1.0 - 2.0 * sum / (k * (k - 1)) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub acc: f64,
}

/// Accuracy after correcting the `k` most wrong concepts of every example.
pub fn intervention_curve(
    model: &TcbmModel,
    dataset: &EmbeddingDataset,
    matrix: &ConceptMatrix,
    split: Split,
    ks: &[usize],
) -> Result<Vec<CurvePoint>> {
    if ks.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("intervention counts must be sorted ascending".into()));
    }
    if let Some(&k) = ks.iter().find(|&&k| k > model.num_concepts()) {
        return Err(Error::Config(format!(
            "cannot intervene on {k} of {} concepts",
            model.num_concepts()
        )));
    }
    let view = dataset.split_view(split);
    view.require_non_empty("evaluation")?;
    let truth = truth_for(model, matrix, dataset)?;
    ks.iter()
        .map(|&k| {
            let mut correct = 0;
            for (&i, r) in view.indices().iter().zip(view.iter()) {
                let out = model.intervene(&r.embedding, truth.row(i), k)?;
                if argmax(&out.logits) == r.label {
                    correct += 1;
                }
            }
            Ok(CurvePoint {
                k,
                acc: percent(correct, view.len()),
            })
        })
        .collect()
}

/// Externally computed token attribution toward one concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub token: String,
    pub concept_id: u32,
    pub score: f64,
}

pub fn load_attributions(path: &Path) -> Result<Vec<AttributionRecord>> {
    json::ndjson_lines(path)?
        .into_iter()
        .map(|(line_no, line)| json::parse_line(line_no, &line))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptExplanation {
    pub concept_id: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Weight of this concept toward each class.
    pub class_weights: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_tokens: Option<Vec<TokenScore>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalExplanation {
    pub num_classes: usize,
    pub class_bias: Vec<f64>,
    pub concepts: Vec<ConceptExplanation>,
}

impl GlobalExplanation {
    /// Weight matrix with one row per concept and one column per class.
    pub fn weight_matrix(&self) -> Vec<Vec<f64>> {
        self.concepts.iter().map(|c| c.class_weights.clone()).collect()
    }
}

pub fn export_global_explanation(
    model: &TcbmModel,
    labels: Option<&BTreeMap<u32, String>>,
    records: Option<&[AttributionRecord]>,
    top_q: usize,
) -> Result<GlobalExplanation> {
    let mut tokens: Option<BTreeMap<u32, BTreeMap<&str, (f64, usize)>>> = None;
    if let Some(records) = records {
        let mut by_concept: BTreeMap<u32, BTreeMap<&str, (f64, usize)>> =
            model.concept_ids.iter().map(|&c| (c, BTreeMap::new())).collect();
        for r in records {
            let table = by_concept.get_mut(&r.concept_id).ok_or(Error::UnknownConcept(r.concept_id))?;
            let entry = table.entry(r.token.as_str()).or_insert((0.0, 0));
            entry.0 += r.score;
            entry.1 += 1;
        }
        tokens = Some(by_concept);
    }
    let a = &model.classifier.weights;
    let concepts = model
        .concept_ids
        .iter()
        .enumerate()
        .map(|(j, &id)| {
            let top_tokens = tokens.as_ref().map(|t| {
                let mut means: Vec<TokenScore> = t[&id]
                    .iter()
                    .map(|(tok, (sum, n))| TokenScore {
                        token: tok.to_string(),
                        score: sum / *n as f64,
                    })
                    .collect();
                means.sort_by(|x, y| y.score.total_cmp(&x.score).then_with(|| x.token.cmp(&y.token)));
                means.truncate(top_q);
                means
            });
            ConceptExplanation {
                concept_id: id,
                label: labels.and_then(|l| l.get(&id).cloned()),
                class_weights: (0..a.rows).map(|k| a.get(k, j)).collect(),
                top_tokens,
            }
        })
        .collect();
    Ok(GlobalExplanation {
        num_classes: model.num_classes(),
        class_bias: model.classifier.bias.clone(),
        concepts,
    })
}
