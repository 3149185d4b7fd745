//! Versioned model files: JSON text with every float stored as the 16 hex
//! digits of its bit pattern, so a load reproduces predictions bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::dataio::LabelSpace;
use crate::experts::TrainedExpert;
use crate::metastack::{BlockInfo, StackConfig, SuperConeModel};
use crate::neural::{MetaParams, MetaStructure, NamedArray};

pub const FORMAT_VERSION: &str = "supercone-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: String,
    pub label_space: LabelSpace,
    pub vocab_size: usize,
    pub layout: Vec<BlockInfo>,
    pub structure: MetaStructure,
    pub tensors: Vec<NamedArray>,
    pub stacks: Vec<Vec<TrainedExpert>>,
    /// Configuration the model was trained with.
    pub config: StackConfig,
    pub seed: u64,
}

impl ModelFile {
    pub fn from_model(model: &SuperConeModel, config: &StackConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION.to_string(),
            label_space: model.label_space.clone(),
            vocab_size: model.vocab_size,
            layout: model.layout.clone(),
            structure: model.meta.structure.clone(),
            tensors: model.meta.to_named_arrays(),
            stacks: model.stacks.clone(),
            config: config.clone(),
            seed: config.seed,
        }
    }

    pub fn into_model(self) -> Result<SuperConeModel, CliError> {
        let invalid = |e: String| CliError::runtime(format!("model: invalid: {e}"));
        if self.format_version != FORMAT_VERSION {
            return Err(invalid(format!(
                "unsupported format `{}` (expected `{FORMAT_VERSION}`)",
                self.format_version
            )));
        }
        let meta = MetaParams::from_named_arrays(self.structure, &self.tensors).map_err(|e| invalid(e.to_string()))?;
        let model = SuperConeModel {
            meta,
            stacks: self.stacks,
            layout: self.layout,
            label_space: self.label_space,
            vocab_size: self.vocab_size,
        };
        model.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model file serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::runtime(format!("model: invalid: {e}")))
    }
}

pub fn save_model(model: &SuperConeModel, config: &StackConfig, path: &Path) -> Result<(), CliError> {
    std::fs::write(path, ModelFile::from_model(model, config).to_json())
        .map_err(|e| CliError::runtime(format!("io: cannot write {}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<SuperConeModel, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|_| CliError::usage(format!("model: not found: {}", path.display())))?;
    ModelFile::from_json(&text)?.into_model()
}
