//! Experiment configuration, read from a TOML file.
//!
//! ```toml
//! name = "s1a-desk"
//! mode = "simulate"
//! n_runs = 15
//! seed = 1
//! strategies = ["composite-mean", "knock-in", "knock-out"]
//!
//! [simulation]
//! preset = "s1a"
//! scale = "desk"
//!
//! [training]
//! epochs = 200
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bir::{MiConfig, Strategy};
use crate::mann::{Activation, ArchitectureSpec, BlockSpec, OutputHead, TrainConfig};
use crate::simgen::{BlockParams, Setup, SimSpec};
use crate::stats::{OutlierPolicy, Task};
use crate::vargrad::VarGradConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Simulate,
    Ingest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Full,
}

/// Either a named preset or explicit blocks, with optional overrides.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub preset: Option<Setup>,
    #[serde(default)]
    pub scale: Scale,
    pub blocks: Option<Vec<BlockParams>>,
    pub noise_fraction: Option<f64>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    /// Defaults to the experiment's base seed.
    pub seed: Option<u64>,
}

impl SimulationConfig {
    pub fn resolve(&self, base_seed: u64) -> Result<SimSpec, ConfigError> {
        let seed = self.seed.unwrap_or(base_seed);
        let mut spec = match (&self.preset, &self.blocks) {
            (Some(setup), None) => match self.scale {
                Scale::Desk => SimSpec::desk_setup(*setup, seed),
                Scale::Full => SimSpec::full_setup(*setup, seed),
            },
            (None, Some(blocks)) => SimSpec {
                blocks: blocks.clone(),
                noise_fraction: 0.10,
                n_train: 4000,
                n_test: 4000,
                seed,
            },
            _ => {
                return Err(ConfigError::Invalid(
                    "[simulation] needs exactly one of `preset` or `blocks`".into(),
                ))
            }
        };
        if let Some(v) = self.noise_fraction {
            spec.noise_fraction = v;
        }
        if let Some(v) = self.n_train {
            spec.n_train = v;
        }
        if let Some(v) = self.n_test {
            spec.n_test = v;
        }
        spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockColumns {
    pub name: String,
    pub columns: Vec<String>,
}

/// Where and how to read a real dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Relative paths are resolved against the config file's directory.
    pub csv: PathBuf,
    pub target: String,
    #[serde(default = "default_task")]
    pub task: Task,
    /// Label of the positive class when the target column is not numeric.
    pub positive_label: Option<String>,
    pub blocks: Vec<BlockColumns>,
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Columns to drop, such as row identifiers.
    #[serde(default)]
    pub ignore: Vec<String>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_task() -> Task {
    Task::Regression
}

fn default_train_fraction() -> f64 {
    0.7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    /// Hidden widths shared by every branch; `None` means one layer of `2 * N_b`.
    pub branch_hidden: Option<Vec<usize>>,
    pub concat_nodes: usize,
    pub blender_widths: Vec<usize>,
    pub activation: Activation,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            branch_hidden: None,
            concat_nodes: 8,
            blender_widths: vec![32],
            activation: Activation::Tanh,
        }
    }
}

impl ArchitectureConfig {
    /// A branch with no hidden layers passes its features straight through.
    pub fn build(&self, block_spec: &BlockSpec, task: Task) -> ArchitectureSpec {
        let head = match task {
            Task::Regression => OutputHead::LinearRegression,
            Task::BinaryClassification => OutputHead::SigmoidBinaryClassification,
        };
        let mut arch = ArchitectureSpec::with_widths(block_spec, head, self.concat_nodes, &self.blender_widths);
        arch.activation = self.activation;
        if let Some(hidden) = &self.branch_hidden {
            for (b, block) in block_spec.blocks().iter().enumerate() {
                arch.branch_widths[b] = hidden.clone();
                if hidden.is_empty() {
                    arch.concat_nodes[b] = block.features.len();
                }
            }
        }
        arch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Runs whose primary metric (R² or accuracy) falls below this are excluded.
    pub performance_threshold: f64,
    pub outlier_policy: OutlierPolicy,
    /// Significance level for tie groups.
    pub alpha: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            performance_threshold: 0.8,
            outlier_policy: OutlierPolicy::LowIqr,
            alpha: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub mode: Mode,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads for independent runs; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub architecture: ArchitectureConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub vargrad: VarGradConfig,
    #[serde(default)]
    pub mi: MiConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

fn default_runs() -> usize {
    30
}

fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

impl ExperimentConfig {
    /// Simulation experiment on a desk-scale preset with default model settings.
    pub fn desk(setup: Setup, n_runs: usize, seed: u64) -> Self {
        Self {
            name: format!("{setup:?}-desk").to_lowercase(),
            mode: Mode::Simulate,
            n_runs,
            seed,
            workers: 0,
            strategies: default_strategies(),
            simulation: Some(SimulationConfig {
                preset: Some(setup),
                ..Default::default()
            }),
            data: None,
            architecture: ArchitectureConfig::default(),
            training: TrainConfig::default(),
            vargrad: VarGradConfig::default(),
            mi: MiConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative data paths become relative to its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml_str(&text)?;
        if let (Some(data), Some(dir)) = (config.data.as_mut(), path.parent()) {
            if data.csv.is_relative() {
                data.csv = dir.join(&data.csv);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        match (self.mode, &self.simulation, &self.data) {
            (Mode::Simulate, Some(sim), None) => {
                sim.resolve(self.seed)?;
            }
            (Mode::Ingest, None, Some(data)) => {
                if !(data.train_fraction > 0.0 && data.train_fraction < 1.0) {
                    return invalid("train_fraction must lie strictly between 0 and 1");
                }
                if data.blocks.is_empty() {
                    return invalid("[data] needs at least one block");
                }
            }
            (Mode::Simulate, _, _) => return invalid("mode = \"simulate\" needs [simulation] and no [data]"),
            (Mode::Ingest, _, _) => return invalid("mode = \"ingest\" needs [data] and no [simulation]"),
        }
        if self.n_runs == 0 {
            return invalid("n_runs must be at least 1");
        }
        if self.strategies.is_empty() {
            return invalid("at least one strategy is required");
        }
        if self.training.epochs == 0 || self.training.batch_size == 0 {
            return invalid("epochs and batch_size must be at least 1");
        }
        self.vargrad.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.mi.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.evaluation.alpha > 0.0 && self.evaluation.alpha < 1.0) {
            return invalid("alpha must lie strictly between 0 and 1");
        }
        Ok(())
    }

    pub fn task(&self) -> Task {
        self.data.as_ref().map_or(Task::Regression, |d| d.task)
    }

    /// Seed of run `r`: the base seed plus `r`.
    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(run as u64)
    }

    /// Hex SHA-256 of the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIM: &str = r#"
name = "demo"
mode = "simulate"
n_runs = 3
seed = 7
strategies = ["knock-in", "composite-max"]

[simulation]
preset = "s1b"

[training]
epochs = 5
optimizer = { learning_rate = 0.01 }
"#;

    #[test]
    fn parses_simulation_config() {
        let c = ExperimentConfig::from_toml_str(SIM).unwrap();
        assert_eq!(c.strategies, vec![Strategy::KnockIn, Strategy::CompositeMax]);
        assert_eq!(c.training.epochs, 5);
        assert_eq!(c.training.batch_size, 64);
        assert_eq!(c.training.optimizer.learning_rate, 0.01);
        assert_eq!(c.training.optimizer.beta2, 0.999);
        let spec = c.simulation.as_ref().unwrap().resolve(c.seed).unwrap();
        assert_eq!(spec.blocks.len(), 5);
        assert_eq!(spec.seed, 7);
        assert_eq!(c.run_seed(2), 9);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::from_toml_str(SIM).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 8;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn toml_round_trip() {
        let a = ExperimentConfig::desk(Setup::S2a, 4, 3);
        let b = ExperimentConfig::from_toml_str(&a.to_toml_string()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_inconsistent_modes() {
        let bad = SIM.replace("mode = \"simulate\"", "mode = \"ingest\"");
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(ConfigError::Invalid(_))));
        let unknown = SIM.replace("n_runs = 3", "n_runs = 3\nbogus = 1");
        assert!(matches!(ExperimentConfig::from_toml_str(&unknown), Err(ConfigError::Parse(_))));
        let bad_strategy = SIM.replace("composite-max", "vargrad-max");
        assert!(ExperimentConfig::from_toml_str(&bad_strategy).is_err());
    }

    #[test]
    fn depth_zero_branches_take_block_width() {
        let spec = BlockSpec::contiguous(&[3, 2]).unwrap();
        let cfg = ArchitectureConfig {
            branch_hidden: Some(vec![]),
            ..Default::default()
        };
        let arch = cfg.build(&spec, Task::Regression);
        assert_eq!(arch.concat_nodes, vec![3, 2]);
        assert!(arch.validate(&spec).is_ok());
    }
}
