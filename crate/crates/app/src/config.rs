use std::fs;
use std::path::{Path, PathBuf};

use bci_core::classify::{ClassifierKind, DEFAULT_REJECTION_PERCENTILE};
use bci_core::control::{DEFAULT_CAR_SPEED_MPS, DEFAULT_TICK_HZ};
use bci_core::dataset::SynthConfig;
use bci_core::features::FeatureSpec;
use bci_core::preprocess::WindowSpec;
use bci_core::{BciError, Result};
use serde::{Deserialize, Serialize};

/// Where the controller writes command words besides the in-memory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PortKind {
    #[default]
    Loopback,
    File {
        path: PathBuf,
    },
    Tcp {
        addr: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Load trials from this dataset directory instead of synthesizing.
    pub dataset: Option<PathBuf>,
    pub synth: SynthConfig,
    pub features: FeatureSpec,
    pub execution_window: WindowSpec,
    pub classifier: ClassifierKind,
    pub rejection_percentile: f64,
    /// Drives synthesis and the train/test split.
    pub seed: u64,
    pub tick_hz: f64,
    pub car_speed_mps: f64,
    pub port: PortKind,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset: None,
            synth: SynthConfig::default(),
            features: FeatureSpec::default(),
            execution_window: WindowSpec::EXECUTION,
            classifier: ClassifierKind::Nn,
            rejection_percentile: DEFAULT_REJECTION_PERCENTILE,
            seed: 42,
            tick_hz: DEFAULT_TICK_HZ,
            car_speed_mps: DEFAULT_CAR_SPEED_MPS,
            port: PortKind::Loopback,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| BciError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| BciError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("pipeline config serializes")
    }

    /// The synthesis config actually used: the pipeline seed wins.
    pub fn effective_synth(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_none() {
            self.effective_synth().validate()?;
        }
        let mut features = self.features.clone();
        features.normalization = None;
        features.validate()?;
        self.execution_window.validate()?;
        if !(0.0..=100.0).contains(&self.rejection_percentile) {
            return Err(BciError::InvalidConfig(format!(
                "rejection percentile {} not in [0, 100]",
                self.rejection_percentile
            )));
        }
        if !(self.tick_hz > 0.0 && self.tick_hz.is_finite()) {
            return Err(BciError::InvalidConfig(format!("tick rate {} must be positive", self.tick_hz)));
        }
        if !(self.car_speed_mps >= 0.0 && self.car_speed_mps.is_finite()) {
            return Err(BciError::InvalidConfig("car speed must be >= 0".into()));
        }
        Ok(())
    }
}
