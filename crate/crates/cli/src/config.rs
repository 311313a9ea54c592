//! Run configuration: defaults, overlaid by a TOML file, overlaid by flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use tcbm_annotate::EndpointConfig;
use tcbm_core::bank::MicroClusterParams;
use tcbm_core::eval::DEFAULT_TOP_Q;
use tcbm_core::pipeline::PipelineConfig;
use tcbm_core::synth::PlantedConfig;

/// Everything a subcommand may read from a config file. All sections are
/// optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, seeds training, random scoring and fixture generation.
    pub seed: Option<u64>,
    pub pipeline: PipelineConfig,
    pub endpoint: EndpointConfig,
    pub micro_clusters: MicroClusterParams,
    pub synth: PlantedConfig,
    pub top_q: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            pipeline: PipelineConfig::default(),
            endpoint: EndpointConfig::default(),
            micro_clusters: MicroClusterParams::default(),
            synth: PlantedConfig::default(),
            top_q: DEFAULT_TOP_Q,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text =
            std::fs::read_to_string(path).with_context(|| format!("config file not found: {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
    }

    /// Flag override of the global seed, then propagation to every seeded
    /// component.
    pub fn apply_seed(&mut self, flag: Option<u64>) {
        if flag.is_some() {
            self.seed = flag;
        }
        if let Some(s) = self.seed {
            self.pipeline.train.seed = s;
            self.pipeline.importance.seed = s;
            self.synth.seed = s;
        }
    }
}

/// Input paths as given on the command line, echoed into artifacts.
#[derive(Debug, Clone, Default)]
pub struct Inputs(pub Vec<(&'static str, PathBuf)>);

impl Inputs {
    pub fn push(&mut self, name: &'static str, path: &Path) -> anyhow::Result<()> {
        if !path.exists() {
            anyhow::bail!("{name} not found: {}", path.display());
        }
        self.0.push((name, path.to_path_buf()));
        Ok(())
    }

    pub fn push_opt(&mut self, name: &'static str, path: Option<&PathBuf>) -> anyhow::Result<()> {
        match path {
            Some(p) => self.push(name, p),
            None => Ok(()),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        self.0
            .iter()
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v.display().to_string())))
            .collect::<serde_json::Map<_, _>>()
            .into()
    }
}
