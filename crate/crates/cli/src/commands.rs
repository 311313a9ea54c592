use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tcbm_annotate::{
    annotate_micro_concepts, dataset_texts, load_annotations, save_annotations, ChatBackend, EndpointConfig,
    EndpointLabeler, HttpBackend, Recorder, Replay,
};
use tcbm_core::bank::{
    build_macro_bank, cluster_micro_concepts, ConceptLabeler, IndexLabeler, MacroConcept, MicroConceptEmbeddings,
};
use tcbm_core::data::{ClassifierHead, ConceptMatrix, EmbeddingDataset, Split};
use tcbm_core::eval::{diversity, evaluate, export_global_explanation, intervention_curve, load_attributions};
use tcbm_core::geometry::compute_cav_set;
use tcbm_core::importance::{score_concepts, ImportanceMethod, ScoresFile};
use tcbm_core::model::TcbmModel;
use tcbm_core::pipeline::{run_pipeline, StopRule};
use tcbm_core::synth::planted_task;
use tcbm_core::train::Strategy;

use crate::config::{Inputs, RunConfig};
use crate::output::OutputDir;
use crate::{Common, EndpointArgs};

const API_KEY_VAR: &str = "TCBM_API_KEY";

/// Object echoed into every artifact: the command, its effective
/// configuration and its inputs.
fn run_record(command: &str, cfg: &RunConfig, inputs: &Inputs) -> Result<Value> {
    Ok(json!({
        "command": command,
        "config": serde_json::to_value(cfg)?,
        "inputs": inputs.to_json(),
    }))
}

fn with_run<T: Serialize>(value: &T, run: &Value) -> Result<Value> {
    let mut v = serde_json::to_value(value)?;
    match v.as_object_mut() {
        Some(obj) => {
            obj.insert("run".into(), run.clone());
            Ok(v)
        }
        None => Ok(json!({ "run": run, "value": v })),
    }
}

fn start(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.apply_seed(common.seed);
    Ok(cfg)
}

fn configure_endpoint(args: &EndpointArgs, cfg: &mut EndpointConfig) {
    if let Some(u) = &args.endpoint {
        cfg.base_url = u.clone();
    }
    if let Some(m) = &args.model {
        cfg.model = m.clone();
    }
    if let Some(n) = args.max_in_flight {
        cfg.max_in_flight = n;
    }
    if let Some(t) = args.timeout {
        cfg.timeout_secs = t;
    }
    if let Ok(key) = std::env::var(API_KEY_VAR) {
        cfg.api_key = Some(key);
    }
}

/// The configured backend, if any: replay, record-through, or live.
fn backend(args: &EndpointArgs, cfg: &EndpointConfig, inputs: &mut Inputs) -> Result<Option<Box<dyn ChatBackend>>> {
    cfg.validate()?;
    Ok(match (&args.cassette, args.record) {
        (Some(c), false) => {
            inputs.push("cassette", c)?;
            Some(Box::new(Replay::open(c)?))
        }
        (Some(c), true) => Some(Box::new(Recorder::open(c, HttpBackend::new(cfg)?)?)),
        (None, _) if args.endpoint.is_some() => Some(Box::new(HttpBackend::new(cfg)?)),
        (None, _) => None,
    })
}

fn load_dataset(path: &Path, inputs: &mut Inputs) -> Result<EmbeddingDataset> {
    inputs.push("dataset", path)?;
    EmbeddingDataset::load(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn load_matrix(path: &Path, dataset: &EmbeddingDataset, inputs: &mut Inputs) -> Result<ConceptMatrix> {
    inputs.push("concepts", path)?;
    ConceptMatrix::load(path, dataset).with_context(|| format!("reading concept matrix {}", path.display()))
}

fn load_head(path: &Path, inputs: &mut Inputs) -> Result<ClassifierHead> {
    inputs.push("head", path)?;
    ClassifierHead::load(path).with_context(|| format!("reading head {}", path.display()))
}

fn load_model(path: &Path, inputs: &mut Inputs) -> Result<TcbmModel> {
    inputs.push("model", path)?;
    TcbmModel::load(path).with_context(|| format!("reading model {}", path.display()))
}

#[derive(Deserialize)]
struct BankConcepts {
    concepts: Vec<MacroConcept>,
}

fn load_bank_labels(path: &Path, inputs: &mut Inputs) -> Result<BTreeMap<u32, String>> {
    inputs.push("bank", path)?;
    let bank: BankConcepts =
        tcbm_core::json::read_json(path).with_context(|| format!("reading bank {}", path.display()))?;
    Ok(bank.concepts.into_iter().map(|c| (c.id, c.label)).collect())
}

fn method_name(method: ImportanceMethod) -> String {
    serde_json::to_value(method)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

#[derive(Args)]
pub struct AnnotateArgs {
    /// Dataset NDJSON whose records carry a `text` field.
    #[arg(long)]
    dataset: PathBuf,
    /// Annotation NDJSON to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    endpoint: EndpointArgs,
    /// Characters kept per text before prompting.
    #[arg(long)]
    char_budget: Option<usize>,
    #[command(flatten)]
    common: Common,
}

pub fn annotate(a: AnnotateArgs) -> Result<()> {
    let mut cfg = start(&a.common)?;
    configure_endpoint(&a.endpoint, &mut cfg.endpoint);
    if a.char_budget.is_some() {
        cfg.endpoint.char_budget = a.char_budget;
    }
    let mut inputs = Inputs::default();
    let dataset = load_dataset(&a.dataset, &mut inputs)?;
    let Some(backend) = backend(&a.endpoint, &cfg.endpoint, &mut inputs)? else {
        bail!("annotate needs --endpoint or --cassette");
    };
    let texts = dataset_texts(&dataset)?;
    let records = annotate_micro_concepts(&texts, backend.as_ref(), &cfg.endpoint)?;
    let (mut out, name) = OutputDir::for_file(&a.out)?;
    let path = out.track(&name)?;
    save_annotations(&path, &records)?;
    let run = run_record("annotate", &cfg, &inputs)?;
    out.write_json(&format!("{name}.run.json"), &with_run(&json!({ "records": records.len() }), &run)?)?;
    out.commit();
    println!("annotated {} texts -> {}", records.len(), path.display());
    Ok(())
}

#[derive(Args)]
pub struct BankArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Micro-annotation NDJSON from `annotate`.
    #[arg(long)]
    annotations: PathBuf,
    /// NDJSON of `{micro, embedding}` sentence embeddings.
    #[arg(long)]
    micro_embeddings: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Smallest micro-concept cluster.
    #[arg(long)]
    min_cluster_size: Option<usize>,
    /// Dimensions kept before clustering.
    #[arg(long)]
    reduce_dims: Option<usize>,
    /// Name clusters through the endpoint or cassette; `cluster-<i>` otherwise.
    #[command(flatten)]
    endpoint: EndpointArgs,
    #[command(flatten)]
    common: Common,
}

pub fn bank(a: BankArgs) -> Result<()> {
    let mut cfg = start(&a.common)?;
    configure_endpoint(&a.endpoint, &mut cfg.endpoint);
    if let Some(m) = a.min_cluster_size {
        cfg.micro_clusters.min_cluster_size = m;
    }
    if let Some(r) = a.reduce_dims {
        cfg.micro_clusters.reduce_dims = r;
    }
    let mut inputs = Inputs::default();
    let dataset = load_dataset(&a.dataset, &mut inputs)?;
    inputs.push("annotations", &a.annotations)?;
    let annotations = load_annotations(&a.annotations, Some(&dataset))?;
    inputs.push("micro_embeddings", &a.micro_embeddings)?;
    let embeds = MicroConceptEmbeddings::load(&a.micro_embeddings)?;
    embeds.check_covers(&annotations)?;
    let backend = backend(&a.endpoint, &cfg.endpoint, &mut inputs)?;
    let clusters = cluster_micro_concepts(&embeds, &cfg.micro_clusters)?;
    let bank = match &backend {
        Some(b) => {
            let labeler = EndpointLabeler {
                backend: b.as_ref(),
                config: &cfg.endpoint,
            };
            build_macro_bank(&clusters, &annotations, &dataset, &labeler as &dyn ConceptLabeler)?
        }
        None => build_macro_bank(&clusters, &annotations, &dataset, &IndexLabeler)?,
    };
    let mut out = OutputDir::create(&a.out_dir)?;
    let bank_path = out.track("bank.json")?;
    let matrix_path = out.track("concepts.ndjson")?;
    bank.save(&bank_path, &matrix_path, &dataset)?;
    let summary = json!({
        "macro_concepts": bank.concepts.len(),
        "micro_concepts": clusters.micro.len(),
        "discard_rate": clusters.discard_rate(),
    });
    out.write_json("run.json", &with_run(&summary, &run_record("bank", &cfg, &inputs)?)?)?;
    out.commit();
    println!(
        "{} macro concepts from {} micro concepts ({:.1}% discarded)",
        bank.concepts.len(),
        clusters.micro.len(),
        100.0 * clusters.discard_rate()
    );
    Ok(())
}

#[derive(Args)]
pub struct ScoreArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Classifier head JSON.
    #[arg(long)]
    head: PathBuf,
    /// Concept presence NDJSON.
    #[arg(long)]
    concepts: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Importance method: cig, tcav, frequency or random.
    #[arg(long)]
    method: Option<ImportanceMethod>,
    /// Quadrature steps for integrated gradients.
    #[arg(long)]
    ig_steps: Option<usize>,
    #[command(flatten)]
    common: Common,
}

pub fn score(a: ScoreArgs) -> Result<()> {
    let mut cfg = start(&a.common)?;
    let imp = &mut cfg.pipeline.importance;
    if let Some(m) = a.method {
        imp.method = m;
    }
    if let Some(s) = a.ig_steps {
        imp.ig_steps = s;
    }
    let mut inputs = Inputs::default();
    let dataset = load_dataset(&a.dataset, &mut inputs)?;
    let head = load_head(&a.head, &mut inputs)?;
    let matrix = load_matrix(&a.concepts, &dataset, &mut inputs)?;
    let (cavs, skipped) = compute_cav_set(&dataset, &matrix)?;
    let importance = cfg.pipeline.importance.clone();
    let scores = score_concepts(&cavs, &dataset, &matrix, &head, &importance)?;
    let file = ScoresFile::new(&importance, scores)?;
    let mut out = OutputDir::create(&a.out_dir)?;
    let name = format!("scores_{}.json", method_name(importance.method));
    let mut body = with_run(&file, &run_record("score", &cfg, &inputs)?)?;
    body["skipped_concepts"] = json!(skipped);
    let path = out.write_json(&name, &body)?;
    out.commit();
    println!("scored {} concepts -> {}", file.scores.len(), path.display());
    Ok(())
}

#[derive(Args)]
pub struct PipelineArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Classifier head JSON.
    #[arg(long)]
    head: PathBuf,
    /// Concept presence NDJSON.
    #[arg(long)]
    concepts: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Tolerated relative accuracy gap to the residual model (default 0.05).
    #[arg(long)]
    epsilon: Option<f64>,
    /// performance-gap, or residual-ma for the moving average of residual importance.
    #[arg(long)]
    stop_rule: Option<StopRule>,
    /// Moving-average order for residual-ma.
    #[arg(long)]
    window: Option<usize>,
    /// Importance method: cig, tcav, frequency or random.
    #[arg(long)]
    method: Option<ImportanceMethod>,
    /// joint, sequential or projection.
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Elastic-net weight on the concept-to-class layer.
    #[arg(long)]
    elastic_net: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Bank JSON; adds concept labels and, with --micro-embeddings, diversity.
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Micro-concept embeddings used to embed labels for diversity.
    #[arg(long, requires = "bank")]
    micro_embeddings: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn label_diversity(
    model: &TcbmModel,
    labels: &BTreeMap<u32, String>,
    embeds: &MicroConceptEmbeddings,
) -> Result<Option<f64>> {
    let mut vectors = Vec::new();
    for id in &model.concept_ids {
        let Some(label) = labels.get(id) else {
            return Ok(None);
        };
        match embeds.get(&label.trim().to_lowercase()) {
            Some(v) => vectors.push(v.to_vec()),
            None => {
                log::warn!("no embedding for label '{label}'; diversity not reported");
                return Ok(None);
            }
        }
    }
    if vectors.len() < 2 {
        return Ok(None);
    }
    Ok(Some(100.0 * diversity(&vectors)?))
}

pub fn pipeline(a: PipelineArgs) -> Result<()> {
    let mut cfg = start(&a.common)?;
    let p = &mut cfg.pipeline;
    if let Some(e) = a.epsilon {
        p.epsilon = e;
    }
    if let Some(r) = a.stop_rule {
        p.stop_rule = r;
    }
    if let Some(w) = a.window {
        p.window = w;
    }
    if let Some(m) = a.method {
        p.importance.method = m;
    }
    if let Some(n) = a.max_iterations {
        p.max_iterations = n;
    }
    let t = &mut p.train;
    if let Some(s) = a.strategy {
        t.strategy = s;
    }
    if let Some(lr) = a.learning_rate {
        t.learning_rate = lr;
    }
    if let Some(e) = a.epochs {
        t.epochs = e;
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b;
    }
    if let Some(en) = a.elastic_net {
        t.elastic_net = en;
    }
    cfg.pipeline.validate()?;

    let mut inputs = Inputs::default();
    let dataset = load_dataset(&a.dataset, &mut inputs)?;
    let head = load_head(&a.head, &mut inputs)?;
    let matrix = load_matrix(&a.concepts, &dataset, &mut inputs)?;
    let labels = a.bank.as_ref().map(|b| load_bank_labels(b, &mut inputs)).transpose()?;
    inputs.push_opt("micro_embeddings", a.micro_embeddings.as_ref())?;
    let embeds = a.micro_embeddings.as_deref().map(MicroConceptEmbeddings::load).transpose()?;
    let run = run_record("pipeline", &cfg, &inputs)?;

    let outcome = run_pipeline(&dataset, &matrix, &head, &cfg.pipeline)?;
    let model = &outcome.model;
    let trace = &outcome.trace;
    let diversity = match (&labels, &embeds) {
        (Some(l), Some(e)) => label_diversity(model, l, e)?,
        _ => None,
    };

    let mut out = OutputDir::create(&a.out_dir)?;
    let model_path = out.track("model.json")?;
    model.save(&model_path)?;
    let mut lines = String::new();
    for rec in &trace.iterations {
        let mut v = serde_json::to_value(rec)?;
        v["selected"] = json!(rec.iteration == trace.selected_iteration);
        lines.push_str(&tcbm_core::json::canonical_value(&v));
        lines.push('\n');
    }
    out.write_text("trace.ndjson", &lines)?;

    println!("split\t%ACC\t%c\t#c");
    for split in [Split::Dev, Split::Test] {
        if dataset.split_view(split).is_empty() {
            continue;
        }
        let mut report = evaluate(model, &dataset, &matrix, split)?;
        report.diversity = diversity;
        let body = json!({
            "report": report,
            "concepts": model.concept_ids,
            "labels": labels.as_ref().map(|l| model.concept_ids.iter().map(|id| l.get(id).cloned()).collect::<Vec<_>>()),
            "selected_iteration": trace.selected_iteration,
            "stop_reason": trace.stop_reason,
            "skipped_concepts": outcome.skipped_concepts,
        });
        out.write_json(&format!("report_{split}.json"), &with_run(&body, &run)?)?;
        println!("{split}\t{}", report.summary_row());
    }
    out.write_json("run.json", &run)?;
    out.commit();
    info!(
        "stopped after {} iterations ({:?}); selected iteration {}",
        trace.iterations.len(),
        trace.stop_reason,
        trace.selected_iteration
    );
    Ok(())
}

#[derive(Args)]
pub struct InterveneArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Concept presence NDJSON used as ground truth.
    #[arg(long)]
    concepts: PathBuf,
    /// Checkpoint written by `pipeline`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Numbers of corrected concepts, ascending.
    #[arg(long = "k", num_args = 1.., default_values_t = [0usize, 1, 2, 3, 4])]
    ks: Vec<usize>,
    /// Split to evaluate: train, dev or test.
    #[arg(long, default_value_t = Split::Test)]
    split: Split,
    #[command(flatten)]
    common: Common,
}

pub fn intervene(a: InterveneArgs) -> Result<()> {
    let cfg = start(&a.common)?;
    let mut inputs = Inputs::default();
    let dataset = load_dataset(&a.dataset, &mut inputs)?;
    let matrix = load_matrix(&a.concepts, &dataset, &mut inputs)?;
    let model = load_model(&a.model, &mut inputs)?;
    let points = intervention_curve(&model, &dataset, &matrix, a.split, &a.ks)?;
    let mut out = OutputDir::create(&a.out_dir)?;
    let body = json!({ "split": a.split, "points": points });
    out.write_json("curve.json", &with_run(&body, &run_record("intervene", &cfg, &inputs)?)?)?;
    out.commit();
    println!("k\t%ACC");
    for p in &points {
        println!("{}\t{:.1}", p.k, p.acc);
    }
    Ok(())
}

#[derive(Args)]
pub struct ExplainArgs {
    /// Checkpoint written by `pipeline`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Bank JSON supplying concept labels.
    #[arg(long)]
    bank: Option<PathBuf>,
    /// NDJSON of `{token, concept_id, score}` token attributions.
    #[arg(long)]
    attributions: Option<PathBuf>,
    /// Tokens kept per concept (default 8).
    #[arg(long)]
    top_q: Option<usize>,
    #[command(flatten)]
    common: Common,
}

pub fn explain(a: ExplainArgs) -> Result<()> {
    let mut cfg = start(&a.common)?;
    if let Some(q) = a.top_q {
        cfg.top_q = q;
    }
    let mut inputs = Inputs::default();
    let model = load_model(&a.model, &mut inputs)?;
    let labels = a.bank.as_ref().map(|b| load_bank_labels(b, &mut inputs)).transpose()?;
    inputs.push_opt("attributions", a.attributions.as_ref())?;
    let records = a.attributions.as_deref().map(load_attributions).transpose()?;
    let explanation = export_global_explanation(&model, labels.as_ref(), records.as_deref(), cfg.top_q)?;
    let mut out = OutputDir::create(&a.out_dir)?;
    let path = out.write_json(
        "explanation.json",
        &with_run(&explanation, &run_record("explain", &cfg, &inputs)?)?,
    )?;
    out.commit();
    println!("{} concepts x {} classes -> {}", explanation.concepts.len(), explanation.num_classes, path.display());
    Ok(())
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// Number of records.
    #[arg(long)]
    n: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    num_concepts: Option<usize>,
    /// Concepts that drive the labels.
    #[arg(long)]
    num_causal: Option<usize>,
    /// Fraction of labels replaced at random.
    #[arg(long)]
    label_noise: Option<f64>,
    #[command(flatten)]
    common: Common,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = start(&a.common)?;
    let s = &mut cfg.synth;
    for (slot, flag) in [
        (&mut s.n, a.n),
        (&mut s.dim, a.dim),
        (&mut s.num_classes, a.num_classes),
        (&mut s.num_concepts, a.num_concepts),
        (&mut s.num_causal, a.num_causal),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    if let Some(noise) = a.label_noise {
        s.label_noise = noise;
    }
    let task = planted_task(&cfg.synth)?;
    let mut out = OutputDir::create(&a.out_dir)?;
    task.dataset.save(&out.track("dataset.ndjson")?)?;
    task.head.save(&out.track("head.json")?)?;
    task.matrix.save(&out.track("concepts.ndjson")?, &task.dataset)?;
    let body = json!({ "causal": task.causal, "offsets": task.offsets, "normals": task.normals });
    out.write_json("planted.json", &with_run(&body, &run_record("synth", &cfg, &Inputs::default())?)?)?;
    out.commit();
    println!("wrote {} records with {} concepts to {}", task.dataset.len(), task.matrix.num_concepts(), a.out_dir.display());
    Ok(())
}
