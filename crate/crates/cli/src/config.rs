use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ftsim_core::model::FaultModel;
use ftsim_core::scenario::ScenarioConfig;

use crate::CliError;

pub const DEFAULT_PRESET: &str = "first-benchmark";

/// Either the name of a bundled preset or a full inline model document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Preset(String),
    Inline(Box<FaultModel>),
}

impl Default for ModelSource {
    fn default() -> Self {
        ModelSource::Preset(DEFAULT_PRESET.into())
    }
}

impl ModelSource {
    pub fn resolve(&self) -> Result<FaultModel, CliError> {
        let model = match self {
            ModelSource::Preset(name) => FaultModel::preset(name).ok_or_else(|| CliError::Parse(format!("unknown model preset '{name}'")))?,
            ModelSource::Inline(m) => (**m).clone(),
        };
        model.validate().map_err(|e| CliError::Parse(e.to_string()))?;
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Emit one trajectory row every `decimation` steps.
    pub decimation: usize,
    pub csv: bool,
    pub json: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("ftsim-out"),
            decimation: 10,
            csv: true,
            json: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CctConfig {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    pub jobs: usize,
}

impl Default for CctConfig {
    fn default() -> Self {
        Self {
            lo: 0.5,
            hi: 1.0,
            tol: 0.01,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSource,
    pub scenario: ScenarioConfig,
    pub output: OutputConfig,
    pub cct: CctConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Parse(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.output.decimation == 0 {
            return Err(CliError::Parse("output.decimation must be at least 1".into()));
        }
        if !(self.cct.lo >= 0.0 && self.cct.hi > self.cct.lo && self.cct.tol > 0.0) {
            return Err(CliError::Parse("cct bracket must satisfy 0 <= lo < hi and tol > 0".into()));
        }
        self.scenario.validate().map_err(|e| CliError::Parse(e.to_string()))?;
        self.model.resolve().map(|_| ())
    }
}
