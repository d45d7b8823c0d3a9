use serde::{Deserialize, Serialize};

use crate::dsp::MelConfig;
use crate::error::{Error, Result};
use crate::gan::{GanConfig, TrainConfig};
use crate::timbre::DescriptorConfig;

/// Every tunable, loaded from a TOML file. Missing keys take their defaults;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "GanConfig::toy")]
    pub gan: GanConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub descriptors: DescriptorConfig,
    #[serde(default)]
    pub mel: MelConfig,
    #[serde(default)]
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gan: GanConfig::toy(),
            train: TrainConfig::default(),
            descriptors: DescriptorConfig::default(),
            mel: MelConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n: usize,
    /// kick, snare, hat
    pub proportions: [f64; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n: 200, proportions: [0.1, 0.6, 0.3] }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.gan.validate()?;
        self.train.validate()?;
        self.descriptors.validate(self.gan.sample_rate)
    }
}
