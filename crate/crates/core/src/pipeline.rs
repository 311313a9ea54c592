//! Iterative growth of the concept bottleneck until the concepts alone are
//! (nearly) as good as concepts plus the residual layer.

use std::time::{Duration, Instant};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::bank::{self, CblInit, CooccurrenceParams};
use crate::data::{validate_concept_matrix, ClassifierHead, ConceptMatrix, EmbeddingDataset, Split, SplitView};
use crate::error::{Error, Result};
use crate::eval::accuracy;
use crate::geometry::{compute_cav_set, Cav};
use crate::importance::{score_concepts, ConceptScore, ImportanceConfig};
use crate::linalg::dot;
use crate::model::TcbmModel;
use crate::train::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    PerformanceGap,
    ResidualImportanceMa,
}

impl std::str::FromStr for StopRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "performance_gap" | "performance" => Ok(Self::PerformanceGap),
            "residual_importance_ma" | "residual_ma" => Ok(Self::ResidualImportanceMa),
            other => Err(Error::Config(format!("unknown stop rule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub epsilon: f64,
    pub stop_rule: StopRule,
    pub window: usize,
    pub max_iterations: usize,
    pub coverage_target: f64,
    pub cooccurrence: CooccurrenceParams,
    pub importance: ImportanceConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            stop_rule: StopRule::PerformanceGap,
            window: 4,
            max_iterations: 50,
            coverage_target: 0.99,
            cooccurrence: CooccurrenceParams::default(),
            importance: ImportanceConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        if !(self.coverage_target > 0.0 && self.coverage_target <= 1.0) {
            return Err(Error::Config("coverage_target must lie in (0, 1]".into()));
        }
        self.importance.validate()?;
        self.train.validate()
    }
}

/// Share of class `k`'s logit magnitude carried by the residual path.
pub fn residual_importance(model: &TcbmModel, z: &[f64], k: usize) -> Result<f64> {
    let residual = model.residual.as_ref().ok_or(Error::NoResidual)?;
    if k >= model.num_classes() {
        return Err(Error::Config(format!("class {k} out of range")));
    }
    let h = model.forward(z)?.activations;
    let r = dot(residual.weights.row(k), z).abs();
    let c: f64 = model
        .classifier
        .weights
        .row(k)
        .iter()
        .zip(&h)
        .map(|(a, x)| a.abs() * x.abs())
        .sum();
    if r + c == 0.0 {
        return Ok(0.0);
    }
    Ok(r / (r + c))
}

/// Mean of [`residual_importance`] over every row of `view` and every class.
pub fn global_residual_importance(model: &TcbmModel, view: &SplitView<'_>) -> Result<f64> {
    view.require_non_empty("residual importance")?;
    let k = model.num_classes();
    let mut sum = 0.0;
    for r in view.iter() {
        for class in 0..k {
            sum += residual_importance(model, &r.embedding, class)?;
        }
    }
    Ok(sum / (view.len() * k) as f64)
}

/// Accuracies are fractions or percents, as long as both use the same scale.
pub fn should_stop_performance(simple_acc: f64, residual_acc: f64, epsilon: f64) -> bool {
    simple_acc >= (1.0 - epsilon) * residual_acc
}

fn window_mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// True once the trailing moving average of `history` stops decreasing:
/// the mean of the last `window` values is at least the mean of the window
/// ending one iteration earlier.
pub fn should_stop_residual_ma(history: &[f64], window: usize) -> bool {
    let n = history.len();
    if window == 0 || n < window + 1 {
        return false;
    }
    window_mean(&history[n - window..]) >= window_mean(&history[n - window - 1..n - 1])
}

/// Latest moving average, once `window` values exist.
pub fn moving_average(history: &[f64], window: usize) -> Option<f64> {
    (window > 0 && history.len() >= window).then(|| window_mean(&history[history.len() - window..]))
}

/// Index of the smallest value; ties go to the earliest.
pub fn argmin_iteration(history: &[f64]) -> Option<usize> {
    (0..history.len()).reduce(|best, i| if history[i] < history[best] { i } else { best })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    PerformanceGap,
    ResidualPlateau,
    ConceptsExhausted,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub concepts: Vec<u32>,
    pub simple_dev_acc: f64,
    pub residual_dev_acc: f64,
    /// Global residual importance on the train split.
    pub residual_importance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_importance_ma: Option<f64>,
    pub stop: bool,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub iterations: Vec<IterationRecord>,
    /// 1-based iteration whose simple model is returned.
    pub selected_iteration: usize,
    pub stop_reason: StopReason,
}

impl PipelineTrace {
    pub fn selected(&self) -> &IterationRecord {
        &self.iterations[self.selected_iteration - 1]
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    /// Simple model of the selected iteration, residual removed.
    pub model: TcbmModel,
    pub trace: PipelineTrace,
    pub cavs: Vec<Cav>,
    pub skipped_concepts: Vec<u32>,
    pub scores: Vec<ConceptScore>,
    pub groups: Vec<Vec<u32>>,
    pub init: CblInit,
}

/// CAVs, scores, co-occurrence groups and the initial bottleneck.
pub struct Prepared {
    pub cavs: Vec<Cav>,
    pub skipped: Vec<u32>,
    pub scores: Vec<ConceptScore>,
    pub groups: Vec<Vec<u32>>,
    pub init: CblInit,
}

pub fn prepare(
    dataset: &EmbeddingDataset,
    matrix: &ConceptMatrix,
    head: &ClassifierHead,
    config: &PipelineConfig,
) -> Result<Prepared> {
    let report = validate_concept_matrix(matrix, dataset)?;
    for w in &report.warnings {
        warn!("{w}");
    }
    let (cavs, skipped) = compute_cav_set(dataset, matrix)?;
    if cavs.is_empty() {
        return Err(Error::TooFew {
            what: "estimable concepts",
            needed: 1,
            got: 0,
        });
    }
    let scores = score_concepts(&cavs, dataset, matrix, head, &config.importance)?;
    let train_rows = dataset.split_view(Split::Train).indices().to_vec();
    let scored: Vec<u32> = cavs.iter().map(|c| c.concept_id).collect();
    let train_matrix = matrix.restrict(&scored)?.select_rows(&train_rows);
    let groups = if scored.len() >= 2 {
        bank::cooccurrence_clusters(&train_matrix, &config.cooccurrence)?
    } else {
        vec![scored.clone()]
    };
    let init = bank::init_cbl(&scores, &groups, &train_matrix, config.coverage_target)?;
    info!(
        "initial bottleneck: {} concepts covering {:.4} of train ({} groups)",
        init.selected.len(),
        init.coverage,
        groups.len()
    );
    Ok(Prepared {
        cavs,
        skipped,
        scores,
        groups,
        init,
    })
}

pub fn run_pipeline(
    dataset: &EmbeddingDataset,
    matrix: &ConceptMatrix,
    head: &ClassifierHead,
    config: &PipelineConfig,
) -> Result<PipelineOutcome> {
    config.validate()?;
    let prepared = prepare(dataset, matrix, head, config)?;
    let train_view = dataset.split_view(Split::Train);
    let dev_view = dataset.split_view(Split::Dev);

    let simple_cfg = TrainConfig {
        residual: false,
        ..config.train.clone()
    };
    let residual_cfg = TrainConfig {
        residual: true,
        ..config.train.clone()
    };
    let mut cbl = prepared.init.selected.clone();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut simple_models: Vec<TcbmModel> = Vec::new();
    let mut history = Vec::new();
    let (selected, reason) = loop {
        let started = Instant::now();
        let iteration = records.len() + 1;
        let simple = train(dataset, matrix, &cbl, &prepared.cavs, &simple_cfg)?.model;
        let residual = train(dataset, matrix, &cbl, &prepared.cavs, &residual_cfg)?.model;
        let simple_acc = accuracy(&simple, &dev_view)?;
        let residual_acc = accuracy(&residual, &dev_view)?;
        let ir = global_residual_importance(&residual, &train_view)?;
        history.push(ir);
        let stop = match config.stop_rule {
            StopRule::PerformanceGap => should_stop_performance(simple_acc, residual_acc, config.epsilon)
                .then_some((iteration, StopReason::PerformanceGap)),
            StopRule::ResidualImportanceMa => should_stop_residual_ma(&history, config.window)
                .then(|| (argmin_iteration(&history).unwrap() + 1, StopReason::ResidualPlateau)),
        };
        info!(
            "iteration {iteration}: {} concepts, dev acc simple {simple_acc:.2} residual {residual_acc:.2}, I_r {ir:.4}",
            cbl.len()
        );
        records.push(IterationRecord {
            iteration,
            concepts: cbl.clone(),
            simple_dev_acc: simple_acc,
            residual_dev_acc: residual_acc,
            residual_importance: ir,
            residual_importance_ma: moving_average(&history, config.window),
            stop: stop.is_some(),
            wall_time: started.elapsed(),
        });
        simple_models.push(simple);
        if let Some(s) = stop {
            break s;
        }
        let next = bank::next_concepts(&prepared.groups, &prepared.scores, &cbl);
        let forced = if next.is_empty() {
            Some(StopReason::ConceptsExhausted)
        } else if iteration >= config.max_iterations {
            Some(StopReason::MaxIterations)
        } else {
            None
        };
        if let Some(reason) = forced {
            warn!("stopping without meeting the criterion: {reason:?}");
            records.last_mut().unwrap().stop = true;
            let pick = match config.stop_rule {
                StopRule::PerformanceGap => best_simple(&records),
                StopRule::ResidualImportanceMa => argmin_iteration(&history).unwrap() + 1,
            };
            break (pick, reason);
        }
        cbl.extend(next);
    };

    let mut model = simple_models.swap_remove(selected - 1).without_residual();
    model.data_hashes.insert("dataset".into(), dataset.content_hash()?);
    model
        .data_hashes
        .insert("concept_matrix".into(), crate::json::sha256_hex(matrix.to_ndjson(dataset)?.as_bytes()));
    Ok(PipelineOutcome {
        model,
        trace: PipelineTrace {
            iterations: records,
            selected_iteration: selected,
            stop_reason: reason,
        },
        cavs: prepared.cavs,
        skipped_concepts: prepared.skipped,
        scores: prepared.scores,
        groups: prepared.groups,
        init: prepared.init,
    })
}

/// Iteration with the best simple dev accuracy; ties go to the earliest.
fn best_simple(records: &[IterationRecord]) -> usize {
    records
        .iter()
        .fold(&records[0], |best, r| if r.simple_dev_acc > best.simple_dev_acc { r } else { best })
        .iteration
}
