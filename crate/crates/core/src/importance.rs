//! Concept importance relative to the frozen classifier head.
//!
//! Two gradient-based scores read the head through the CAV direction: CIG
//! (mean absolute projection of integrated-gradients attributions) and TCAV
//! (per-class fraction of inputs whose class gradient points along the
//! CAV). Frequency and seeded-random scores are cheap baselines. The final
//! ranking key is `importance × identifiability`.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClassifierHead, ConceptMatrix, EmbeddingDataset, HeadKind, Split, SplitView};
use crate::error::{Error, Result};
use crate::geometry::Cav;
use crate::json;
use crate::linalg::{dot, log_softmax, softmax};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMethod {
    Cig,
    Tcav,
    Frequency,
    Random,
}

impl std::str::FromStr for ImportanceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cig" => Ok(Self::Cig),
            "tcav" => Ok(Self::Tcav),
            "frequency" => Ok(Self::Frequency),
            "random" => Ok(Self::Random),
            other => Err(Error::Config(format!("unknown importance method '{other}'"))),
        }
    }
}

/// Which scalar of the head is differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Logit,
    LogSoftmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TcavNormalization {
    /// Each class fraction uses that class's own count.
    PerClass,
    /// Each class count is divided by the whole training-set size.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImportanceConfig {
    pub method: ImportanceMethod,
    pub gradient_mode: GradientMode,
    pub ig_steps: usize,
    pub tcav_normalization: TcavNormalization,
    pub seed: u64,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        Self {
            method: ImportanceMethod::Cig,
            gradient_mode: GradientMode::Logit,
            ig_steps: 64,
            tcav_normalization: TcavNormalization::PerClass,
            seed: 0,
        }
    }
}

impl ImportanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ig_steps == 0 {
            return Err(Error::Config("ig_steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptScore {
    pub concept_id: u32,
    pub importance: f64,
    pub identifiability: f64,
    pub combined: f64,
    /// TCAV sum divided by the class count, reported next to the raw sum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance_per_class: Option<f64>,
}

impl ConceptScore {
    pub fn new(concept_id: u32, importance: f64, identifiability: f64) -> Self {
        Self {
            concept_id,
            importance,
            identifiability,
            combined: importance * identifiability,
            importance_per_class: None,
        }
    }
}

/// Sort descending by combined score, ties by concept id ascending.
pub fn sort_scores(scores: &mut [ConceptScore]) {
    scores.sort_by(|a, b| {
        b.combined
            .total_cmp(&a.combined)
            .then(a.concept_id.cmp(&b.concept_id))
    });
}

/// Scalar output of the head for class `k` under `mode`.
pub fn head_output(head: &ClassifierHead, z: &[f64], k: usize, mode: GradientMode) -> f64 {
    let logits = head.logits(z);
    match mode {
        GradientMode::Logit => logits[k],
        GradientMode::LogSoftmax => log_softmax(&logits)[k],
    }
}

fn check_class(head: &ClassifierHead, k: usize) -> Result<()> {
    if k >= head.num_classes() {
        return Err(Error::Config(format!(
            "class {k} out of range for a head with {} outputs",
            head.num_classes()
        )));
    }
    Ok(())
}

/// Gradient of [`head_output`] with respect to the embedding.
pub fn head_gradient(
    head: &ClassifierHead,
    z: &[f64],
    k: usize,
    mode: GradientMode,
) -> Result<Vec<f64>> {
    check_class(head, k)?;
    if z.len() != head.input_dim() {
        return Err(Error::Shape(format!(
            "embedding has dimension {}, head expects {}",
            z.len(),
            head.input_dim()
        )));
    }
    // d output / d logits
    let mut upstream = vec![0.0; head.num_classes()];
    upstream[k] = 1.0;
    if mode == GradientMode::LogSoftmax {
        let p = softmax(&head.logits(z));
        for (u, pj) in upstream.iter_mut().zip(&p) {
            *u -= pj;
        }
    }
    let through_output = head.weights.t_matvec(&upstream);
    Ok(match &head.hidden {
        None => through_output,
        Some(h) => {
            let local: Vec<f64> = h
                .weights
                .matvec(z)
                .iter()
                .zip(&h.bias)
                .zip(&through_output)
                .map(|((p, b), g)| g * h.activation.derivative(p + b))
                .collect();
            h.weights.t_matvec(&local)
        }
    })
}

/// Integrated gradients along the straight path from `baseline` to `z`,
/// midpoint rule with `steps` nodes. Linear heads in logit mode use the
/// closed form `(z - z') ⊙ w_k`.
pub fn integrated_gradients(
    head: &ClassifierHead,
    z: &[f64],
    baseline: &[f64],
    k: usize,
    steps: usize,
    mode: GradientMode,
) -> Result<Vec<f64>> {
    check_class(head, k)?;
    if z.len() != baseline.len() {
        return Err(Error::Shape("embedding and baseline differ in dimension".into()));
    }
    let delta: Vec<f64> = z.iter().zip(baseline).map(|(a, b)| a - b).collect();
    if head.kind == HeadKind::Linear && mode == GradientMode::Logit {
        return Ok(delta.iter().zip(head.weights.row(k)).map(|(d, w)| d * w).collect());
    }
    let steps = steps.max(1);
    let mut avg = vec![0.0; z.len()];
    let mut point = vec![0.0; z.len()];
    for s in 0..steps {
        let t = (s as f64 + 0.5) / steps as f64;
        for ((p, b), d) in point.iter_mut().zip(baseline).zip(&delta) {
            *p = b + t * d;
        }
        let g = head_gradient(head, &point, k, mode)?;
        for (a, gi) in avg.iter_mut().zip(g) {
            *a += gi / steps as f64;
        }
    }
    Ok(avg.iter().zip(&delta).map(|(a, d)| a * d).collect())
}

/// Per-example attribution vectors over one split, targeting each example's
/// ground-truth class. Computed once and shared across concepts.
#[derive(Debug, Clone)]
pub struct Attributions {
    pub labels: Vec<usize>,
    pub vectors: Vec<Vec<f64>>,
}

impl Attributions {
    pub fn integrated_gradients(
        view: &SplitView<'_>,
        head: &ClassifierHead,
        baseline: &[f64],
        config: &ImportanceConfig,
    ) -> Result<Self> {
        let mut labels = Vec::with_capacity(view.len());
        let mut vectors = Vec::with_capacity(view.len());
        for r in view.iter() {
            labels.push(r.label);
            vectors.push(integrated_gradients(
                head,
                &r.embedding,
                baseline,
                r.label,
                config.ig_steps,
                config.gradient_mode,
            )?);
        }
        Ok(Self { labels, vectors })
    }

    pub fn gradients(
        view: &SplitView<'_>,
        head: &ClassifierHead,
        config: &ImportanceConfig,
    ) -> Result<Self> {
        let mut labels = Vec::with_capacity(view.len());
        let mut vectors = Vec::with_capacity(view.len());
        for r in view.iter() {
            labels.push(r.label);
            vectors.push(head_gradient(head, &r.embedding, r.label, config.gradient_mode)?);
        }
        Ok(Self { labels, vectors })
    }
}

/// Mean over examples of `|⟨γ, IG(x)⟩|`.
pub fn cig_importance(direction: &[f64], attributions: &Attributions) -> Result<f64> {
    if attributions.vectors.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    let total: f64 = attributions
        .vectors
        .iter()
        .map(|ig| dot(direction, ig).abs())
        .sum();
    Ok(total / attributions.vectors.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcavScore {
    /// Sum over classes, in `[0, K]` under per-class normalization.
    pub sum: f64,
    pub per_class: f64,
}

/// Sum over classes of the fraction of that class's examples whose gradient
/// has a positive projection on `direction`.
pub fn tcav_importance(
    direction: &[f64],
    gradients: &Attributions,
    num_classes: usize,
    normalization: TcavNormalization,
) -> Result<TcavScore> {
    let n = gradients.vectors.len();
    if n == 0 {
        return Err(Error::EmptySplit("train"));
    }
    let mut totals = vec![0usize; num_classes];
    let mut positive = vec![0usize; num_classes];
    for (&y, g) in gradients.labels.iter().zip(&gradients.vectors) {
        totals[y] += 1;
        if dot(direction, g) > 0.0 {
            positive[y] += 1;
        }
    }
    let mut sum = 0.0;
    for k in 0..num_classes {
        if totals[k] == 0 {
            warn!("class {k} absent from train; contributes 0 to TCAV");
            continue;
        }
        let denom = match normalization {
            TcavNormalization::PerClass => totals[k],
            TcavNormalization::Global => n,
        };
        sum += positive[k] as f64 / denom as f64;
    }
    Ok(TcavScore {
        sum,
        per_class: sum / num_classes as f64,
    })
}

/// Fraction of the given rows where the concept is present.
pub fn frequency_importance(column: &[u8], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().filter(|&&i| column[i] == 1).count() as f64 / rows.len() as f64
}

/// Score every concept that has a CAV. Output is sorted by combined score.
pub fn score_concepts(
    cavs: &[Cav],
    dataset: &EmbeddingDataset,
    matrix: &ConceptMatrix,
    head: &ClassifierHead,
    config: &ImportanceConfig,
) -> Result<Vec<ConceptScore>> {
    config.validate()?;
    if head.input_dim() != dataset.dim() || head.num_classes() != dataset.num_classes() {
        return Err(Error::Shape(format!(
            "head maps {} -> {}, dataset has d={} and K={}",
            head.input_dim(),
            head.num_classes(),
            dataset.dim(),
            dataset.num_classes()
        )));
    }
    let train = dataset.split_view(Split::Train);
    train.require_non_empty("train")?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let attributions = match config.method {
        ImportanceMethod::Cig => Some(Attributions::integrated_gradients(
            &train,
            head,
            dataset.baseline(),
            config,
        )?),
        ImportanceMethod::Tcav => Some(Attributions::gradients(&train, head, config)?),
        _ => None,
    };
    let mut scores = Vec::with_capacity(cavs.len());
    for cav in cavs {
        let mut score = match config.method {
            ImportanceMethod::Cig => {
                let i = cig_importance(&cav.direction, attributions.as_ref().expect("cig"))?;
                ConceptScore::new(cav.concept_id, i, cav.identifiability)
            }
            ImportanceMethod::Tcav => {
                let t = tcav_importance(
                    &cav.direction,
                    attributions.as_ref().expect("tcav"),
                    dataset.num_classes(),
                    config.tcav_normalization,
                )?;
                let mut s = ConceptScore::new(cav.concept_id, t.sum, cav.identifiability);
                s.importance_per_class = Some(t.per_class);
                s
            }
            ImportanceMethod::Frequency => {
                let column = matrix.column_of(cav.concept_id)?;
                let i = frequency_importance(&column, train.indices());
                ConceptScore::new(cav.concept_id, i, cav.identifiability)
            }
            ImportanceMethod::Random => {
                ConceptScore::new(cav.concept_id, rng.random::<f64>(), cav.identifiability)
            }
        };
        score.combined = score.importance * score.identifiability;
        scores.push(score);
    }
    sort_scores(&mut scores);
    Ok(scores)
}

/// On-disk scores artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresFile {
    pub method: ImportanceMethod,
    pub config: ImportanceConfig,
    pub config_hash: String,
    pub scores: Vec<ConceptScore>,
}

impl ScoresFile {
    pub fn new(config: &ImportanceConfig, scores: Vec<ConceptScore>) -> Result<Self> {
        Ok(Self {
            method: config.method,
            config: config.clone(),
            config_hash: json::sha256_hex(json::to_canonical(config)?.as_bytes()),
            scores,
        })
    }
}
