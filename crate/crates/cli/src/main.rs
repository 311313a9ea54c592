//! `tcbm`: build, inspect and probe concept bottleneck models from files.
//!
//! Exit codes: 0 on success, 1 for invalid inputs or configuration,
//! 2 when the annotation endpoint or cassette fails.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "tcbm", version, about = "Concept bottleneck models over frozen text classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// TOML config file; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Global seed for training, random scoring and fixture generation.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone)]
pub struct EndpointArgs {
    /// Base URL of an OpenAI-compatible chat endpoint (e.g. http://host:8000/v1).
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,
    /// Cassette of recorded completions; replayed offline unless --record.
    #[arg(long, value_name = "FILE")]
    pub cassette: Option<PathBuf>,
    /// Forward cassette misses to --endpoint and append them to the cassette.
    #[arg(long, requires_all = ["endpoint", "cassette"])]
    pub record: bool,
    /// Model name sent with each request.
    #[arg(long)]
    pub model: Option<String>,
    /// Maximum concurrent requests.
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Per-request timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract micro concepts (topic lists) for every text of a dataset.
    Annotate(commands::AnnotateArgs),
    /// Cluster micro concepts into a labeled macro-concept bank and presence matrix.
    Bank(commands::BankArgs),
    /// Score concepts by importance times identifiability.
    Score(commands::ScoreArgs),
    /// Grow the bottleneck until the stop rule fires and evaluate the result.
    Pipeline(commands::PipelineArgs),
    /// Accuracy after correcting the k most wrong concepts per example.
    Intervene(commands::InterveneArgs),
    /// Export concept-to-class weights and optional top tokens per concept.
    Explain(commands::ExplainArgs),
    /// Write a planted-concept synthetic task.
    Synth(commands::SynthArgs),
}

struct CliError {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for CliError {
    fn from(error: anyhow::Error) -> Self {
        let external = error
            .chain()
            .filter_map(|e| e.downcast_ref::<tcbm_annotate::AnnotateError>())
            .any(|e| e.is_external());
        Self {
            code: if external { 2 } else { 1 },
            error,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Annotate(a) => commands::annotate(a),
        Command::Bank(a) => commands::bank(a),
        Command::Score(a) => commands::score(a),
        Command::Pipeline(a) => commands::pipeline(a),
        Command::Intervene(a) => commands::intervene(a),
        Command::Explain(a) => commands::explain(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result.map_err(CliError::from) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
