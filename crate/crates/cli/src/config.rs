//! JSON run configuration. The schema is validated before any computation
//! and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trafficgp_core::admm::AdmmConfig;
use trafficgp_core::data::{SplitSpec, TrafficConfig};
use trafficgp_core::fusion::FusionStrategy;
use trafficgp_core::gp::OptimConfig;
use trafficgp_core::kernel::KernelSpec;

use crate::commands::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default = "KernelSpec::weekly_daily_se")]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub predict: PredictConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<ClusterConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// Either a synthetic generator section or a CSV path, plus the
/// chronological split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<TrafficConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub split: SplitSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub mode: TrainMode,
    #[serde(default)]
    pub admm: AdmmConfig,
    #[serde(default)]
    pub optim: OptimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Centralized,
            admm: AdmmConfig::default(),
            optim: OptimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    #[default]
    Centralized,
    Admm,
}

impl std::str::FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "centralized" => Ok(TrainMode::Centralized),
            "admm" => Ok(TrainMode::Admm),
            other => Err(format!("unknown mode '{other}' (use centralized|admm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    #[serde(default = "default_strategy")]
    pub strategy: FusionStrategy,
    /// When non-empty, `evaluate` scores every listed strategy in one report.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub benchmark: Vec<FusionStrategy>,
}

fn default_strategy() -> FusionStrategy {
    FusionStrategy::Rbcm
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            strategy: default_strategy(),
            benchmark: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub endpoints: Vec<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| {
            CliError::Config(format!(
                "invalid config {} at line {} column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.data.synthetic, &self.data.csv) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "data section must set either 'synthetic' or 'csv', not both".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Config(
                    "data section must set 'synthetic' or 'csv'".into(),
                ))
            }
            _ => {}
        }
        if let Some(synthetic) = &self.data.synthetic {
            synthetic
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        self.kernel
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train
            .admm
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train
            .optim
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(cluster) = &self.cluster {
            if cluster.endpoints.is_empty() {
                return Err(CliError::Config("cluster.endpoints is empty".into()));
            }
            for e in &cluster.endpoints {
                e.parse::<trafficgp_cluster::Endpoint>()
                    .map_err(|err| CliError::Config(err.to_string()))?;
            }
        }
        Ok(())
    }
}
