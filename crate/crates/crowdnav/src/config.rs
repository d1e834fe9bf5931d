//! Run configuration: one TOML file with a section per subsystem.

use std::path::Path;

use crowdnav_core::eval::ExperimentConfig;
use crowdnav_core::planner::PlannerConfig;
use crowdnav_core::predict::PredictorConfig;
use crowdnav_core::sim::SimConfig;
use crowdnav_core::value::{AnalyticValue, NetConfig, TrainConfig};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported config version {0}, expected {CONFIG_VERSION}")]
    Version(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Where an external predictor lives.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExternalPredictorConfig {
    /// Program and arguments of a subprocess speaking the protocol on stdio.
    pub command: Vec<String>,
    /// `host:port` of a TCP server; used when `command` is empty.
    pub address: Option<String>,
    /// Response timeout, milliseconds.
    pub timeout_ms: Option<u64>,
}

impl ExternalPredictorConfig {
    pub const DEFAULT_TIMEOUT_MS: u64 = 2000;

    pub fn timeout(&self) -> std::time::Duration {
        std::time::Duration::from_millis(self.timeout_ms.unwrap_or(Self::DEFAULT_TIMEOUT_MS))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValueNetSection {
    pub layers: NetConfig,
    pub training: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub external_predictor: ExternalPredictorConfig,
    #[serde(default)]
    pub value_net: ValueNetSection,
    #[serde(default)]
    pub analytic_value: AnalyticValue,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            sim: SimConfig::default(),
            predictor: PredictorConfig::default(),
            external_predictor: ExternalPredictorConfig::default(),
            value_net: ValueNetSection::default(),
            analytic_value: AnalyticValue::default(),
            planner: PlannerConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Version(self.version));
        }
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.sim.validate().map_err(|e| invalid(&e))?;
        self.planner.validate().map_err(|e| invalid(&e))?;
        self.value_net.layers.validate().map_err(|e| invalid(&e))?;
        let p = &self.predictor;
        if p.observation_len < 2 || p.horizon == 0 || p.num_samples == 0 {
            return Err(ConfigError::Invalid("predictor needs observation_len >= 2, horizon >= 1, num_samples >= 1".into()));
        }
        if self.experiment.num_cases == 0 {
            return Err(ConfigError::Invalid("experiment.num_cases must be at least 1".into()));
        }
        if self.value_net.training.buffer_capacity == 0 {
            return Err(ConfigError::Invalid("value_net.training.buffer_capacity must be positive".into()));
        }
        Ok(())
    }
}
