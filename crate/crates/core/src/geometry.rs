//! Concept activation vectors and the linear concept probe built on them.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{ConceptMatrix, EmbeddingDataset, Split, SplitView};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

/// A concept direction with its dev-split probe statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cav {
    pub concept_id: u32,
    pub direction: Vec<f64>,
    pub threshold: f64,
    pub identifiability: f64,
}

/// Mean embedding of present examples minus mean of absent ones, over the
/// rows of `view`. `column` is indexed by dataset row.
pub fn compute_cav(view: &SplitView<'_>, column: &[u8], concept_id: u32) -> Result<Vec<f64>> {
    let dim = view.dataset().dim();
    let mut pos = vec![0.0; dim];
    let mut neg = vec![0.0; dim];
    let (mut n_pos, mut n_neg) = (0usize, 0usize);
    for (&row, rec) in view.indices().iter().zip(view.iter()) {
        let (acc, count) = if column[row] == 1 {
            (&mut pos, &mut n_pos)
        } else {
            (&mut neg, &mut n_neg)
        };
        *count += 1;
        for (a, x) in acc.iter_mut().zip(&rec.embedding) {
            *a += x;
        }
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UnestimableCav(concept_id));
    }
    Ok(pos
        .iter()
        .zip(&neg)
        .map(|(p, n)| p / n_pos as f64 - n / n_neg as f64)
        .collect())
}

pub fn project(embedding: &[f64], cav: &[f64]) -> Result<f64> {
    if embedding.len() != cav.len() {
        return Err(Error::Shape(format!(
            "embedding has dimension {}, CAV has {}",
            embedding.len(),
            cav.len()
        )));
    }
    Ok(dot(embedding, cav))
}

/// Median; an even count averages the two middle values.
pub fn median_threshold(projections: &[f64]) -> Result<f64> {
    if projections.is_empty() {
        return Err(Error::EmptySplit("dev"));
    }
    let mut sorted = projections.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Strictly above the threshold counts as present.
pub fn predict_concept_linear(projection: f64, threshold: f64) -> u8 {
    u8::from(projection > threshold)
}

/// Binary F1 with presence as the positive class; 0 when undefined.
pub fn f1_score(predicted: &[u8], truth: &[u8]) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Median-threshold the projections and score the probe against `truth`.
/// Returns `(threshold, F1)`.
pub fn identifiability(projections: &[f64], truth: &[u8]) -> Result<(f64, f64)> {
    let threshold = median_threshold(projections)?;
    let predicted: Vec<u8> = projections
        .iter()
        .map(|&p| predict_concept_linear(p, threshold))
        .collect();
    if truth.iter().all(|&t| t == 0) {
        warn!("concept has no positives on dev; identifiability set to 0");
    }
    Ok((threshold, f1_score(&predicted, truth)))
}

pub fn cosine_projection(embedding: &[f64], cav: &[f64]) -> Result<f64> {
    let ne = norm(embedding);
    let nc = norm(cav);
    if ne == 0.0 {
        return Err(Error::ZeroNorm("embedding"));
    }
    if nc == 0.0 {
        return Err(Error::ZeroNorm("CAV"));
    }
    Ok(project(embedding, cav)? / (ne * nc))
}

/// CAVs for every concept that has both present and absent training rows.
/// Directions come from train, thresholds and F1 from dev. Concepts that
/// cannot be estimated are returned separately.
pub fn compute_cav_set(
    dataset: &EmbeddingDataset,
    matrix: &ConceptMatrix,
) -> Result<(Vec<Cav>, Vec<u32>)> {
    let train = dataset.split_view(Split::Train);
    let dev = dataset.split_view(Split::Dev);
    train.require_non_empty("train")?;
    dev.require_non_empty("dev")?;
    let mut cavs = Vec::new();
    let mut skipped = Vec::new();
    for (col, &id) in matrix.concept_ids().iter().enumerate() {
        let column = matrix.column(col);
        let direction = match compute_cav(&train, &column, id) {
            Ok(d) => d,
            Err(Error::UnestimableCav(_)) => {
                warn!("skipping concept {id}: constant on train");
                skipped.push(id);
                continue;
            }
            Err(e) => return Err(e),
        };
        let projections: Vec<f64> = dev.iter().map(|r| dot(&r.embedding, &direction)).collect();
        let truth: Vec<u8> = dev.indices().iter().map(|&i| column[i]).collect();
        let (threshold, g) = identifiability(&projections, &truth)?;
        cavs.push(Cav {
            concept_id: id,
            direction,
            threshold,
            identifiability: g,
        });
    }
    Ok((cavs, skipped))
}
