//! TOML experiment configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{far_pool_size, ProbeConfig, Protocol};
use crate::gw::Variant;
use crate::shapes::DatasetConfig;
use crate::trainer::Unpaired;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Where records come from: a `gen-data` directory (verified against its
/// manifest) or in-memory generation from `dataset`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSource {
    pub dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SingleRun {
    pub variant: Variant,
    pub n: usize,
    pub m: Unpaired,
    pub seed: u64,
}

impl Default for SingleRun {
    fn default() -> Self {
        Self { variant: Variant::AllSupAllCycles, n: 500, m: Unpaired::ALL, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub variants: Vec<Variant>,
    pub n: Vec<usize>,
    pub seeds: Vec<u64>,
    pub m: Unpaired,
    /// Also train and score an odd-one-out probe for every cell.
    pub ooo: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            n: vec![50, 100, 500, 1000, 5000, 10_000],
            seeds: vec![0, 1, 2],
            m: Unpaired::ALL,
            ooo: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OooConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Far-pool size; defaults to `max(50, K / 1000)`.
    pub far: Option<usize>,
    pub seed: u64,
    pub probe: ProbeConfig,
}

impl Default for OooConfig {
    fn default() -> Self {
        Self { n_train: 10_000, n_test: 1000, far: None, seed: 0, probe: ProbeConfig::default() }
    }
}

impl OooConfig {
    pub fn far_for(&self, pool: usize) -> usize {
        self.far.unwrap_or_else(|| far_pool_size(pool))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub n: usize,
    pub m: Vec<usize>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n: 500,
            m: vec![0, 500, 1500, 4500, 9500],
            variants: vec![Variant::TranslationOnly, Variant::TransCont, Variant::AllSupAllCycles],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectConfig {
    pub variant: Variant,
    pub n: usize,
    pub seed: u64,
    pub values: Vec<f64>,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self { variant: Variant::AllSupAllCycles, n: 500, seed: 0, values: vec![0.1, 1.0, 10.0] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Seed of the frozen specialists.
    pub specialist_seed: u64,
    pub data: DataSource,
    pub protocol: Protocol,
    pub train: SingleRun,
    pub ablation: AblationConfig,
    pub ooo: OooConfig,
    pub sweep: SweepConfig,
    pub select: SelectConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks that do not need the dataset size.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let p = &self.protocol;
        if p.batch_size < 4 || p.steps == 0 || p.eval_every == 0 {
            return bad("protocol needs batch_size >= 4, steps > 0 and eval_every > 0");
        }
        if !(p.learning_rate.is_finite() && p.learning_rate > 0.0) {
            return bad("protocol learning_rate must be positive");
        }
        for (v, w) in &p.weights {
            w.validate_for(*v).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.ablation.variants.is_empty() || self.ablation.n.is_empty() || self.ablation.seeds.is_empty() {
            return bad("ablation needs at least one variant, N and seed");
        }
        if self.sweep.m.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sweep M values must be strictly increasing");
        }
        if self.select.values.is_empty() || self.select.values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("select values must be positive");
        }
        Ok(())
    }
}
