#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcbm_core::data::{Activation, ClassifierHead, ConceptMatrix, EmbeddingDataset, HiddenLayer, Record, Split};
use tcbm_core::linalg::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_rows(&(0..rows).map(|_| vector(rng, cols)).collect::<Vec<_>>()).unwrap()
}

pub fn linear_head(rng: &mut ChaCha8Rng, d: usize, k: usize) -> ClassifierHead {
    ClassifierHead::linear(matrix(rng, k, d), vector(rng, k)).unwrap()
}

pub fn mlp_head(rng: &mut ChaCha8Rng, d: usize, h: usize, k: usize, activation: Activation) -> ClassifierHead {
    let hidden = HiddenLayer {
        weights: matrix(rng, h, d),
        bias: vector(rng, h),
        activation,
    };
    ClassifierHead::mlp(hidden, matrix(rng, k, h), vector(rng, k)).unwrap()
}

/// Random dataset where roughly `train`/`dev` fractions land in each split,
/// with every split non-empty, plus a random binary concept matrix.
pub fn random_task(
    rng: &mut ChaCha8Rng,
    n: usize,
    d: usize,
    k: usize,
    p: usize,
) -> (EmbeddingDataset, ConceptMatrix) {
    let records = (0..n)
        .map(|i| Record {
            id: format!("r{i}"),
            split: match i % 5 {
                0 => Split::Dev,
                1 if i % 10 == 1 => Split::Test,
                _ => Split::Train,
            },
            label: rng.random_range(0..k),
            embedding: vector(rng, d),
            text: None,
        })
        .collect();
    let rows = (0..n)
        .map(|i| (0..p).map(|j| u8::from((i + j) % 3 == 0 || rng.random_bool(0.3))).collect())
        .collect();
    (
        EmbeddingDataset::new(records, Some(k), None).unwrap(),
        ConceptMatrix::new((0..p as u32).collect(), rows).unwrap(),
    )
}
