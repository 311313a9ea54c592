//! Mini-batch training of a TCBM on a fixed concept list.

use std::fmt;
use std::ops::Range;

use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ConceptMatrix, EmbeddingDataset, Split};
use crate::error::{Error, Result};
use crate::geometry::Cav;
use crate::linalg::Matrix;
use crate::model::{ConceptLayer, Example, Linear, LossTerms, LossWeights, TcbmModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Joint,
    Sequential,
    Projection,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Self::Joint),
            "sequential" => Ok(Self::Sequential),
            "projection" => Ok(Self::Projection),
            other => Err(Error::Config(format!("unknown strategy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    /// Plain fixed-step gradient descent.
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the concept loss.
    pub lambda: f64,
    /// Ridge weight on Φ^r.
    pub ridge: f64,
    /// Elastic-net weight on Φ^cls.
    pub elastic_net: f64,
    /// L1 share of the elastic net.
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub strategy: Strategy,
    pub residual: bool,
    /// Feed σ(concept logits) rather than raw logits to Φ^cls.
    pub squash: bool,
    pub optimizer: Optimizer,
    /// Epochs without dev-loss improvement before stopping; `None` runs
    /// every epoch. The best dev-loss parameters are always kept.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            ridge: 0.01,
            elastic_net: 0.5,
            alpha: 0.01,
            learning_rate: 0.001,
            epochs: 15,
            batch_size: 8,
            strategy: Strategy::Joint,
            residual: false,
            squash: true,
            optimizer: Optimizer::Adam,
            patience: Some(3),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lambda >= 0.0 && self.ridge >= 0.0 && self.elastic_net >= 0.0) {
            return bad("lambda, ridge and elastic_net must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if self.patience == Some(0) {
            return bad("patience must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Joint,
    Concepts,
    Classifier,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Joint => "joint",
            Self::Concepts => "concepts",
            Self::Classifier => "classifier",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    /// Mean of the per-batch losses seen during the epoch.
    pub train: LossTerms,
    pub dev: LossTerms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: TcbmModel,
    pub log: Vec<EpochRecord>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, trainable: Range<usize>) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in trainable {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn uniform_linear(rng: &mut ChaCha8Rng, out: usize, input: usize) -> Linear {
    let bound = 1.0 / (input.max(1) as f64).sqrt();
    let mut l = Linear::zeros(out, input);
    for w in &mut l.weights.data {
        *w = rng.random_range(-bound..=bound);
    }
    l
}

/// Seeded initialization: uniform weights in ±1/√fan_in, zero biases.
pub fn init_model(
    concept_ids: &[u32],
    dim: usize,
    num_classes: usize,
    cavs: &[Cav],
    config: &TrainConfig,
) -> Result<TcbmModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let p = concept_ids.len();
    let concept_layer = if config.strategy == Strategy::Projection {
        let mut rows = Vec::with_capacity(p);
        for &id in concept_ids {
            let cav = cavs
                .iter()
                .find(|c| c.concept_id == id)
                .ok_or(Error::UnknownConcept(id))?;
            let n = crate::linalg::norm(&cav.direction);
            if n == 0.0 {
                return Err(Error::ZeroNorm("concept direction"));
            }
            rows.push(cav.direction.iter().map(|x| x / n).collect::<Vec<_>>());
        }
        let directions = if rows.is_empty() { Matrix::zeros(0, dim) } else { Matrix::from_rows(&rows)? };
        if directions.cols != dim {
            return Err(Error::Shape(format!("CAVs have dimension {}, data {dim}", directions.cols)));
        }
        ConceptLayer::Projection { directions }
    } else {
        ConceptLayer::Affine(uniform_linear(&mut rng, p, dim))
    };
    let classifier = uniform_linear(&mut rng, num_classes, p);
    let residual = config.residual.then(|| uniform_linear(&mut rng, num_classes, dim));
    TcbmModel::new(concept_ids.to_vec(), concept_layer, classifier, residual, config.clone())
}

fn phases(config: &TrainConfig) -> Vec<(Phase, LossWeights)> {
    let full = LossWeights {
        concept: config.lambda,
        class: 1.0,
        ridge: config.ridge,
        elastic_net: config.elastic_net,
        alpha: config.alpha,
    };
    match config.strategy {
        Strategy::Joint => vec![(Phase::Joint, full)],
        Strategy::Sequential => vec![
            (
                Phase::Concepts,
                LossWeights {
                    concept: 1.0,
                    class: 0.0,
                    ridge: 0.0,
                    elastic_net: 0.0,
                    alpha: 0.0,
                },
            ),
            (Phase::Classifier, full),
        ],
        Strategy::Projection => vec![(Phase::Classifier, LossWeights { concept: 0.0, ..full })],
    }
}

/// Trains on the train split with early stopping on dev. `matrix` may be
/// the whole bank; it is restricted to `concept_ids`. `cavs` is only read
/// in projection mode.
pub fn train(
    dataset: &EmbeddingDataset,
    matrix: &ConceptMatrix,
    concept_ids: &[u32],
    cavs: &[Cav],
    config: &TrainConfig,
) -> Result<Trained> {
    config.validate()?;
    if matrix.num_rows() != dataset.len() {
        return Err(Error::Shape(format!(
            "concept matrix has {} rows, dataset {}",
            matrix.num_rows(),
            dataset.len()
        )));
    }
    let train_view = dataset.split_view(Split::Train);
    let dev_view = dataset.split_view(Split::Dev);
    train_view.require_non_empty("train")?;
    dev_view.require_non_empty("dev")?;
    let restricted = matrix.restrict(concept_ids)?;
    for (j, &id) in concept_ids.iter().enumerate() {
        let pos = train_view.indices().iter().filter(|&&i| restricted.get(i, j) == 1).count();
        if pos == 0 || pos == train_view.len() {
            return Err(Error::Config(format!(
                "concept {id} has {pos} of {} train positives and cannot be trained",
                train_view.len()
            )));
        }
    }
    let examples = |rows: &[usize]| -> Vec<Example<'_>> {
        rows.iter()
            .map(|&i| {
                let r = &dataset.records()[i];
                Example {
                    embedding: &r.embedding,
                    label: r.label,
                    concepts: restricted.row(i),
                }
            })
            .collect()
    };
    let train_set = examples(train_view.indices());
    let dev_set = examples(dev_view.indices());

    let mut model = init_model(concept_ids, dataset.dim(), dataset.num_classes(), cavs, config)?;
    let mut log = Vec::new();
    for (phase_index, (phase, weights)) in phases(config).into_iter().enumerate() {
        let (nc, n) = (model.concept_param_count(), model.parameters().len());
        let trainable = match phase {
            Phase::Joint => 0..n,
            Phase::Concepts => 0..nc,
            Phase::Classifier => nc..n,
        };
        run_phase(
            &mut model,
            &train_set,
            &dev_set,
            phase,
            &weights,
            trainable,
            config,
            config.seed.wrapping_add(1 + phase_index as u64),
            &mut log,
        )?;
    }
    Ok(Trained { model, log })
}

#[allow(clippy::too_many_arguments)]
fn run_phase(
    model: &mut TcbmModel,
    train_set: &[Example<'_>],
    dev_set: &[Example<'_>],
    phase: Phase,
    weights: &LossWeights,
    trainable: Range<usize>,
    config: &TrainConfig,
    seed: u64,
    log: &mut Vec<EpochRecord>,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = model.parameters();
    let mut adam = Adam::new(params.len());
    let mut best_params = params.clone();
    let mut best_dev = model.loss(dev_set, weights)?.total;
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossTerms::default();
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_set[i]));
            let (terms, grad) = model.loss_and_gradient(&batch, weights)?;
            if !terms.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    detail: format!("{phase} phase, batch {batches}: {terms:?}"),
                });
            }
            match config.optimizer {
                Optimizer::Adam => adam.step(&mut params, &grad, config.learning_rate, trainable.clone()),
                Optimizer::Sgd => {
                    for i in trainable.clone() {
                        params[i] -= config.learning_rate * grad[i];
                    }
                }
            }
            model.set_parameters(&params)?;
            sum.total += terms.total;
            sum.concept += terms.concept;
            sum.class += terms.class;
            sum.penalty += terms.penalty;
            batches += 1;
        }
        let nb = batches as f64;
        let train = LossTerms {
            total: sum.total / nb,
            concept: sum.concept / nb,
            class: sum.class / nb,
            penalty: sum.penalty / nb,
        };
        let dev = model.loss(dev_set, weights)?;
        if !dev.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!("{phase} phase dev loss: {dev:?}"),
            });
        }
        debug!("{phase} epoch {epoch}: train {:.6} dev {:.6}", train.total, dev.total);
        log.push(EpochRecord { phase, epoch, train, dev });
        if dev.total < best_dev {
            best_dev = dev.total;
            best_params.clone_from(&params);
            stale = 0;
        } else {
            stale += 1;
            if config.patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }
    model.set_parameters(&best_params)
}
