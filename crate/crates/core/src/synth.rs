//! Planted-concept synthetic tasks with known causal concepts.
//!
//! Embeddings are standard normal. Each concept is a halfspace whose normal
//! is dominated by one coordinate; labels are a sparse linear vote of the
//! causal concepts, with a fraction of labels resampled at random. The
//! coordinates not owned by a concept also carry a noisy linear image of
//! the class votes, the way a fine-tuned backbone encodes its task. The
//! frozen head is a multinomial logistic regression fit on the train split.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ClassifierHead, ConceptMatrix, EmbeddingDataset, Record, Split};
use crate::error::{Error, Result};
use crate::linalg::{argmax, dot, norm, softmax, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub n: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub num_concepts: usize,
    pub num_causal: usize,
    pub label_noise: f64,
    /// Off-axis noise added to each unit concept normal before renormalizing.
    pub mixing: f64,
    /// Halfspace offsets are drawn from ±`offset_range`.
    pub offset_range: f64,
    /// Scale of the class-vote image written into the free coordinates.
    pub label_signal: f64,
    pub train_fraction: f64,
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            dim: 32,
            num_classes: 3,
            num_concepts: 24,
            num_causal: 8,
            label_noise: 0.05,
            mixing: 0.25,
            offset_range: 0.5,
            label_signal: 1.5,
            train_fraction: 0.6,
            dev_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedTask {
    pub dataset: EmbeddingDataset,
    pub matrix: ConceptMatrix,
    pub head: ClassifierHead,
    /// Causal concept ids, ascending.
    pub causal: Vec<u32>,
    pub normals: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
    /// Class votes of each causal concept (`num_classes × num_causal`).
    pub votes: Matrix,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn planted_task(cfg: &PlantedConfig) -> Result<PlantedTask> {
    if cfg.num_concepts > cfg.dim {
        return Err(Error::Config("need one axis per concept (num_concepts <= dim)".into()));
    }
    if cfg.num_causal == 0 || cfg.num_causal > cfg.num_concepts || cfg.num_classes < 2 {
        return Err(Error::Config("invalid causal concept or class count".into()));
    }
    if !(0.0..=1.0).contains(&cfg.label_noise) || cfg.train_fraction + cfg.dev_fraction > 1.0 {
        return Err(Error::Config("invalid noise level or split fractions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let axes = sample(&mut rng, cfg.dim, cfg.dim).into_vec();
    let (concept_axes, free_axes) = axes.split_at(cfg.num_concepts);
    let normals: Vec<Vec<f64>> = concept_axes
        .iter()
        .map(|&axis| {
            let mut v = vec![0.0; cfg.dim];
            for &a in concept_axes {
                v[a] = cfg.mixing * normal(&mut rng) / (cfg.num_concepts as f64).sqrt();
            }
            v[axis] += 1.0;
            let n = norm(&v);
            v.iter().map(|x| x / n).collect()
        })
        .collect();
    let offsets: Vec<f64> = (0..cfg.num_concepts)
        .map(|_| rng.random_range(-cfg.offset_range..=cfg.offset_range))
        .collect();
    let mut causal: Vec<u32> = sample(&mut rng, cfg.num_concepts, cfg.num_causal)
        .into_iter()
        .map(|c| c as u32)
        .collect();
    causal.sort_unstable();
    let mut votes = Matrix::zeros(cfg.num_classes, cfg.num_causal);
    for t in 0..cfg.num_causal {
        votes.row_mut(t % cfg.num_classes)[t] = rng.random_range(1.0..2.0);
    }
    let image: Vec<Vec<f64>> = free_axes
        .iter()
        .map(|_| (0..cfg.num_classes).map(|_| normal(&mut rng)).collect())
        .collect();

    let n_train = (cfg.n as f64 * cfg.train_fraction).round() as usize;
    let n_dev = (cfg.n as f64 * cfg.dev_fraction).round() as usize;
    let mut records = Vec::with_capacity(cfg.n);
    let mut rows = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let mut z: Vec<f64> = (0..cfg.dim).map(|_| normal(&mut rng)).collect();
        let c: Vec<u8> = normals
            .iter()
            .zip(&offsets)
            .map(|(nv, b)| u8::from(dot(nv, &z) > *b))
            .collect();
        let planted: Vec<f64> = causal.iter().map(|&j| f64::from(c[j as usize])).collect();
        let class_votes = votes.matvec(&planted);
        let mean_vote = class_votes.iter().sum::<f64>() / cfg.num_classes as f64;
        let centered: Vec<f64> = class_votes.iter().map(|v| v - mean_vote).collect();
        for (&axis, row) in free_axes.iter().zip(&image) {
            z[axis] += cfg.label_signal * dot(row, &centered);
        }
        let mut label = argmax(&class_votes);
        if rng.random::<f64>() < cfg.label_noise {
            label = rng.random_range(0..cfg.num_classes);
        }
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
        records.push(Record {
            id: format!("x{i:05}"),
            split,
            label,
            embedding: z,
            text: None,
        });
        rows.push(c);
    }
    let dataset = EmbeddingDataset::new(records, Some(cfg.num_classes), None)?;
    let matrix = ConceptMatrix::new((0..cfg.num_concepts as u32).collect(), rows)?;
    let head = fit_logistic_head(&dataset, 300, 0.5, 1e-4)?;
    Ok(PlantedTask {
        dataset,
        matrix,
        head,
        causal,
        normals,
        offsets,
        votes,
    })
}

/// Full-batch gradient descent on ridge-penalized softmax cross-entropy
/// over the train split.
pub fn fit_logistic_head(dataset: &EmbeddingDataset, steps: usize, lr: f64, ridge: f64) -> Result<ClassifierHead> {
    let train = dataset.split_view(Split::Train);
    train.require_non_empty("train")?;
    let (k, d) = (dataset.num_classes(), dataset.dim());
    let mut w = Matrix::zeros(k, d);
    let mut b = vec![0.0; k];
    let inv_n = 1.0 / train.len() as f64;
    for _ in 0..steps {
        let mut gw = Matrix::zeros(k, d);
        let mut gb = vec![0.0; k];
        for r in train.iter() {
            let mut logits = w.matvec(&r.embedding);
            for (l, bi) in logits.iter_mut().zip(&b) {
                *l += bi;
            }
            let mut p = softmax(&logits);
            p[r.label] -= 1.0;
            for (c, pc) in p.iter().enumerate() {
                for (g, x) in gw.row_mut(c).iter_mut().zip(&r.embedding) {
                    *g += pc * x * inv_n;
                }
                gb[c] += pc * inv_n;
            }
        }
        for (wi, gi) in w.data.iter_mut().zip(&gw.data) {
            *wi -= lr * (gi + 2.0 * ridge * *wi);
        }
        for (bi, gi) in b.iter_mut().zip(&gb) {
            *bi -= lr * gi;
        }
    }
    ClassifierHead::linear(w, b)
}
