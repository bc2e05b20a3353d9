//! JSON run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chlorocast::evaluation::{AblationVariant, MetricScale, DEFAULT_MAPE_EPSILON};
use chlorocast::model::{ModelConfig, HORIZONS};
use chlorocast::pipeline::PipelineOptions;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Horizons of the module ablation; the horizon sweep always uses all four.
    pub horizons: Vec<usize>,
    pub sweep_horizons: Vec<usize>,
    pub variants: Vec<AblationVariant>,
    pub seeds: Vec<u64>,
    pub workers: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            horizons: vec![24],
            sweep_horizons: HORIZONS.to_vec(),
            variants: AblationVariant::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub model: ModelConfig,
    pub pipeline: PipelineOptions,
    pub mape_epsilon: f64,
    pub scale: MetricScale,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            model: ModelConfig::default(),
            pipeline: PipelineOptions::default(),
            mape_epsilon: DEFAULT_MAPE_EPSILON,
            scale: MetricScale::Raw,
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: Self =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if !(config.mape_epsilon > 0.0) {
            bail!("mape_epsilon must be positive");
        }
        Ok(config)
    }
}

/// Flag value if given, else the config entry, else an error naming both.
pub fn pick_path(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    match flag.or_else(|| config.clone()) {
        Some(p) => Ok(p),
        None => bail!("no {name} path: pass --{name} or set paths.{name} in the config"),
    }
}
