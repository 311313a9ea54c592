//! The TCBM itself: concept layer Φ^C, interpretable head Φ^cls and the
//! optional residual Φ^r, with the joint loss and its analytic gradient.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json;
use crate::linalg::{argmax, dot, log_softmax, sigmoid, softmax, softplus, Matrix};
use crate::train::TrainConfig;

/// Affine map `weights · x + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(out: usize, input: usize) -> Self {
        Self {
            weights: Matrix::zeros(out, input),
            bias: vec![0.0; out],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weights.matvec(x);
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v += b;
        }
        y
    }

    fn check(&self, out: usize, input: usize, what: &str) -> Result<()> {
        if self.weights.rows != out || self.weights.cols != input || self.bias.len() != out {
            return Err(Error::Shape(format!(
                "{what} must be {out}x{input} with {out} biases, got {}x{} with {}",
                self.weights.rows,
                self.weights.cols,
                self.bias.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ConceptLayer {
    /// Trainable affine detector.
    Affine(Linear),
    /// Frozen cosine similarity to unit-normalized CAVs.
    Projection { directions: Matrix },
}

impl ConceptLayer {
    pub fn num_concepts(&self) -> usize {
        match self {
            Self::Affine(l) => l.weights.rows,
            Self::Projection { directions } => directions.rows,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Self::Affine(l) => l.weights.cols,
            Self::Projection { directions } => directions.cols,
        }
    }

    pub fn is_projection(&self) -> bool {
        matches!(self, Self::Projection { .. })
    }

    fn params(&self) -> Vec<f64> {
        match self {
            Self::Affine(l) => [l.weights.data.as_slice(), &l.bias].concat(),
            Self::Projection { .. } => Vec::new(),
        }
    }
}

/// Per-example forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub concept_logits: Vec<f64>,
    /// Representation consumed by Φ^cls (squashed logits when enabled).
    pub activations: Vec<f64>,
    pub logits: Vec<f64>,
}

/// One training example: embedding, class, and concept truth over the CBL.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub embedding: &'a [f64],
    pub label: usize,
    pub concepts: &'a [u8],
}

/// Scalar weights of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub concept: f64,
    pub class: f64,
    pub ridge: f64,
    pub elastic_net: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub concept: f64,
    pub class: f64,
    pub penalty: f64,
}

/// Elastic-net penalty `λ_EN(α‖A‖₁ + (1−α)‖A‖²)`.
pub fn elastic_net_penalty(a: &Matrix, lambda_en: f64, alpha: f64) -> f64 {
    lambda_en * (alpha * a.l1() + (1.0 - alpha) * a.sq_frobenius())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcbmModel {
    pub concept_ids: Vec<u32>,
    pub concept_layer: ConceptLayer,
    pub classifier: Linear,
    pub residual: Option<Linear>,
    pub config: TrainConfig,
    pub seed: u64,
    #[serde(default)]
    pub data_hashes: BTreeMap<String, String>,
}

impl TcbmModel {
    pub fn new(
        concept_ids: Vec<u32>,
        concept_layer: ConceptLayer,
        classifier: Linear,
        residual: Option<Linear>,
        config: TrainConfig,
    ) -> Result<Self> {
        let model = Self {
            seed: config.seed,
            concept_ids,
            concept_layer,
            classifier,
            residual,
            config,
            data_hashes: BTreeMap::new(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.concept_ids.len();
        let d = self.dim();
        let k = self.num_classes();
        if self.concept_layer.num_concepts() != p {
            return Err(Error::Shape(format!(
                "concept layer has {} units for {p} concepts",
                self.concept_layer.num_concepts()
            )));
        }
        if let ConceptLayer::Affine(l) = &self.concept_layer {
            l.check(p, d, "concept layer")?;
        }
        self.classifier.check(k, p, "classifier")?;
        if let Some(r) = &self.residual {
            r.check(k, d, "residual layer")?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.concept_layer.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.weights.rows
    }

    pub fn num_concepts(&self) -> usize {
        self.concept_ids.len()
    }

    pub fn has_residual(&self) -> bool {
        self.residual.is_some()
    }

    /// The same model with Φ^r removed.
    pub fn without_residual(&self) -> Self {
        Self {
            residual: None,
            config: TrainConfig {
                residual: false,
                ..self.config.clone()
            },
            ..self.clone()
        }
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::Shape(format!(
                "embedding has dimension {}, model expects {}",
                z.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn concept_logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        Ok(self.concept_logits_unchecked(z))
    }

    fn concept_logits_unchecked(&self, z: &[f64]) -> Vec<f64> {
        match &self.concept_layer {
            ConceptLayer::Affine(l) => l.apply(z),
            ConceptLayer::Projection { directions } => {
                let nz = dot(z, z).sqrt();
                (0..directions.rows)
                    .map(|j| if nz == 0.0 { 0.0 } else { dot(directions.row(j), z) / nz })
                    .collect()
            }
        }
    }

    pub fn squash(&self, concept_logits: &[f64]) -> Vec<f64> {
        if self.config.squash {
            concept_logits.iter().map(|&u| sigmoid(u)).collect()
        } else {
            concept_logits.to_vec()
        }
    }

    /// Class logits from a (possibly edited) activation vector.
    pub fn classify(&self, activations: &[f64], z: &[f64]) -> Vec<f64> {
        let mut logits = self.classifier.apply(activations);
        if let Some(r) = &self.residual {
            for (l, v) in logits.iter_mut().zip(r.apply(z)) {
                *l += v;
            }
        }
        logits
    }

    pub fn forward(&self, z: &[f64]) -> Result<Forward> {
        let concept_logits = self.concept_logits(z)?;
        let activations = self.squash(&concept_logits);
        let logits = self.classify(&activations, z);
        Ok(Forward {
            concept_logits,
            activations,
            logits,
        })
    }

    pub fn predict(&self, z: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(z)?.logits))
    }

    /// Replaces the `k` activations farthest from `truth` by the truth
    /// values (ties by CBL position) and recomputes the class logits.
    pub fn intervene(&self, z: &[f64], truth: &[u8], k: usize) -> Result<Forward> {
        if truth.len() != self.num_concepts() {
            return Err(Error::Shape(format!(
                "truth covers {} concepts, model has {}",
                truth.len(),
                self.num_concepts()
            )));
        }
        if k > self.num_concepts() {
            return Err(Error::Config(format!(
                "cannot intervene on {k} of {} concepts",
                self.num_concepts()
            )));
        }
        let mut out = self.forward(z)?;
        let mut order: Vec<usize> = (0..truth.len()).collect();
        let gap = |j: usize| (out.activations[j] - f64::from(truth[j])).abs();
        order.sort_by(|&a, &b| gap(b).total_cmp(&gap(a)).then(a.cmp(&b)));
        for &j in order.iter().take(k) {
            out.activations[j] = f64::from(truth[j]);
        }
        out.logits = self.classify(&out.activations, z);
        Ok(out)
    }

    /// Number of leading entries of [`Self::parameters`] owned by Φ^C.
    pub fn concept_param_count(&self) -> usize {
        match &self.concept_layer {
            ConceptLayer::Affine(l) => l.weights.data.len() + l.bias.len(),
            ConceptLayer::Projection { .. } => 0,
        }
    }

    /// Trainable parameters: Φ^C (affine only), Φ^cls, then Φ^r; weights
    /// before biases within each layer.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = self.concept_layer.params();
        p.extend(&self.classifier.weights.data);
        p.extend(&self.classifier.bias);
        if let Some(r) = &self.residual {
            p.extend(&r.weights.data);
            p.extend(&r.bias);
        }
        p
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.parameters().len();
        if flat.len() != expected {
            return Err(Error::Shape(format!("expected {expected} parameters, got {}", flat.len())));
        }
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        if let ConceptLayer::Affine(l) = &mut self.concept_layer {
            take(&mut l.weights.data);
            take(&mut l.bias);
        }
        take(&mut self.classifier.weights.data);
        take(&mut self.classifier.bias);
        if let Some(r) = &mut self.residual {
            take(&mut r.weights.data);
            take(&mut r.bias);
        }
        Ok(())
    }

    pub fn penalty(&self, w: &LossWeights) -> f64 {
        let ridge = self.residual.as_ref().map_or(0.0, |r| w.ridge * r.weights.sq_frobenius());
        ridge + elastic_net_penalty(&self.classifier.weights, w.elastic_net, w.alpha)
    }

    /// Batch-mean loss terms with the gradient laid out like
    /// [`Self::parameters`]. Penalties are added once per batch and never
    /// touch biases.
    pub fn loss_and_gradient(&self, batch: &[Example<'_>], w: &LossWeights) -> Result<(LossTerms, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let p = self.num_concepts();
        let d = self.dim();
        let k = self.num_classes();
        let inv_b = 1.0 / batch.len() as f64;
        let affine = !self.concept_layer.is_projection();
        let mut g_c = Linear::zeros(if affine { p } else { 0 }, d);
        let mut g_cls = Linear::zeros(k, p);
        let mut g_r = self.residual.as_ref().map(|_| Linear::zeros(k, d));
        let (mut concept_sum, mut class_sum) = (0.0, 0.0);

        for ex in batch {
            self.check_dim(ex.embedding)?;
            if ex.concepts.len() != p {
                return Err(Error::Shape(format!(
                    "example carries {} concept labels, model has {p}",
                    ex.concepts.len()
                )));
            }
            if ex.label >= k {
                return Err(Error::Shape(format!("label {} out of range for {k} classes", ex.label)));
            }
            let z = ex.embedding;
            let u = self.concept_logits_unchecked(z);
            let h = self.squash(&u);
            let logits = self.classify(&h, z);
            let lsm = log_softmax(&logits);
            class_sum -= lsm[ex.label];
            if p > 0 {
                concept_sum += u
                    .iter()
                    .zip(ex.concepts)
                    .map(|(&uj, &cj)| softplus(uj) - f64::from(cj) * uj)
                    .sum::<f64>()
                    / p as f64;
            }

            let mut ds = softmax(&logits);
            ds[ex.label] -= 1.0;
            for v in &mut ds {
                *v *= w.class * inv_b;
            }
            for (i, &dsi) in ds.iter().enumerate() {
                for (g, hj) in g_cls.weights.row_mut(i).iter_mut().zip(&h) {
                    *g += dsi * hj;
                }
                g_cls.bias[i] += dsi;
            }
            if let Some(g_r) = &mut g_r {
                for (i, &dsi) in ds.iter().enumerate() {
                    for (g, zj) in g_r.weights.row_mut(i).iter_mut().zip(z) {
                        *g += dsi * zj;
                    }
                    g_r.bias[i] += dsi;
                }
            }
            if affine {
                let dh = self.classifier.weights.t_matvec(&ds);
                for j in 0..p {
                    let dact = if self.config.squash { h[j] * (1.0 - h[j]) } else { 1.0 };
                    let du = dh[j] * dact
                        + w.concept * inv_b / p as f64 * (sigmoid(u[j]) - f64::from(ex.concepts[j]));
                    for (g, zi) in g_c.weights.row_mut(j).iter_mut().zip(z) {
                        *g += du * zi;
                    }
                    g_c.bias[j] += du;
                }
            }
        }

        for (g, a) in g_cls.weights.data.iter_mut().zip(&self.classifier.weights.data) {
            *g += w.elastic_net * (w.alpha * sign(*a) + 2.0 * (1.0 - w.alpha) * a);
        }
        if let (Some(g_r), Some(r)) = (&mut g_r, &self.residual) {
            for (g, wr) in g_r.weights.data.iter_mut().zip(&r.weights.data) {
                *g += 2.0 * w.ridge * wr;
            }
        }

        let concept = concept_sum * inv_b;
        let class = class_sum * inv_b;
        let penalty = self.penalty(w);
        let terms = LossTerms {
            total: w.concept * concept + w.class * class + penalty,
            concept,
            class,
            penalty,
        };
        let mut grad = Vec::with_capacity(self.parameters().len());
        if affine {
            grad.extend(&g_c.weights.data);
            grad.extend(&g_c.bias);
        }
        grad.extend(&g_cls.weights.data);
        grad.extend(&g_cls.bias);
        if let Some(g_r) = g_r {
            grad.extend(&g_r.weights.data);
            grad.extend(&g_r.bias);
        }
        Ok((terms, grad))
    }

    pub fn loss(&self, batch: &[Example<'_>], w: &LossWeights) -> Result<LossTerms> {
        self.loss_and_gradient(batch, w).map(|(t, _)| t)
    }

    /// SHA-256 of the Φ^C parameters (directions in projection mode).
    pub fn concept_layer_hash(&self) -> Result<String> {
        Ok(json::sha256_hex(json::to_canonical(&self.concept_layer)?.as_bytes()))
    }

    pub fn to_canonical_string(&self) -> Result<String> {
        json::to_canonical(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        json::write_canonical(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: Self = json::read_json(path)?;
        model.validate()?;
        Ok(model)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
