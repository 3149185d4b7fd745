use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::dataio::SynthSpec;
use crate::experts::ExpertSpec;
use crate::metastack::{OptimizerConfig, StackConfig};
use crate::neural::NeuralConfig;

/// JSON Schema for [`ExperimentConfig`], printed by `config-schema`.
pub const CONFIG_SCHEMA: &str = include_str!("../../config.schema.json");

fn default_levels() -> usize {
    1
}
fn default_folds() -> usize {
    3
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub trace: Option<PathBuf>,
}

/// One experiment. Relative paths resolve against the config file's
/// directory; command-line flags override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// LIBSVM training file. Exactly one of `train` and `synth` is needed.
    #[serde(default)]
    pub train: Option<PathBuf>,
    /// Test file whose indices widen the vocabulary when `vocab_size` is unset.
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Generate the training set instead of reading one.
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    /// Class tokens in index order; scanned from the training file if absent.
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    #[serde(default)]
    pub vocab_size: Option<usize>,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Roster used at every level unless `level_rosters` is given.
    #[serde(default = "ExpertSpec::default_roster")]
    pub roster: Vec<ExpertSpec>,
    #[serde(default)]
    pub level_rosters: Option<Vec<Vec<ExpertSpec>>>,
    #[serde(default)]
    pub neural: NeuralConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputPaths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::usage(format!("config: invalid: {e}")))
    }

    /// Reads `path` and resolves relative data/output paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| CliError::usage(format!("config: not found: {}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.train,
            &mut cfg.test,
            &mut cfg.output.model,
            &mut cfg.output.trace,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn stack_config(&self) -> Result<StackConfig, CliError> {
        let rosters = match &self.level_rosters {
            Some(r) => r.clone(),
            None => vec![self.roster.clone(); self.levels],
        };
        let cfg = StackConfig {
            levels: self.levels,
            folds: self.folds,
            rosters,
            neural: self.neural.clone(),
            optimizer: self.optimizer.clone(),
            seed: self.seed,
        };
        cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(cfg)
    }
}
