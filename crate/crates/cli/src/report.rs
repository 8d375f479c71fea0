//! Persisted run reports. Every quantity except the wall-clock `timing`
//! section is a pure function of the config and seed, so a repeated run
//! reproduces the report byte-for-byte once `timing` is stripped
//! (see [`deterministic_bytes`]).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use trafficgp_core::admm::TrainResult;
use trafficgp_core::fusion::FusionStrategy;

use crate::commands::CliError;
use crate::config::{RunConfig, TrainMode};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timing {
    pub total_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_iteration_ms: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_worker_mean_ms: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub mean_local_objective: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub kind: String,
    pub mode: TrainMode,
    pub config: RunConfig,
    pub theta_star: Vec<f64>,
    /// ADMM only: residual thresholds met within the iteration budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    pub iterations: usize,
    /// Centralized only: objective after every accepted step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_trace: Option<Vec<f64>>,
    /// ADMM only: per-iteration residuals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<HistoryRow>>,
    pub timing: Timing,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub mape_percent: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: FusionStrategy,
    pub metrics: Metrics,
    pub predictions_csv: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: String,
    pub config: RunConfig,
    pub theta_star: Vec<f64>,
    pub results: BTreeMap<String, StrategyResult>,
    pub timing: Timing,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub k: usize,
    pub mean_local_update_ms: f64,
    pub total_train_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub kind: String,
    pub config: RunConfig,
    pub outer_iterations: usize,
    pub repeats: usize,
    pub rows: Vec<BenchRow>,
    pub csv: String,
    pub timing: Timing,
}

pub(crate) fn history_rows(result: &TrainResult) -> Vec<HistoryRow> {
    result
        .state
        .history
        .iter()
        .enumerate()
        .map(|(i, h)| HistoryRow {
            iteration: i,
            primal_residual: h.primal_residual,
            dual_residual: h.dual_residual,
            mean_local_objective: h.mean_local_objective,
        })
        .collect()
}

pub(crate) fn admm_timing(result: &TrainResult, total_s: f64) -> Timing {
    let k = result
        .update_wall_ms
        .first()
        .map(|round| round.len())
        .unwrap_or(0);
    let iters = result.update_wall_ms.len().max(1) as f64;
    let per_worker_mean_ms = (0..k)
        .map(|w| {
            result
                .update_wall_ms
                .iter()
                .map(|round| round[w])
                .sum::<f64>()
                / iters
        })
        .collect();
    Timing {
        total_s,
        per_iteration_ms: result
            .state
            .history
            .iter()
            .map(|h| h.wall_ms)
            .collect(),
        per_worker_mean_ms,
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("cannot serialize report: {e}")))?;
    body.push('\n');
    std::fs::write(path, body)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

pub fn read_train_report(path: &Path) -> Result<TrainReport, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read report {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid report {}: {e}", path.display())))
}

/// Report bytes with the wall-clock `timing` subtree removed: the
/// deterministic content of a report, identical across repeated seeded runs.
pub fn deterministic_bytes(report_json: &[u8]) -> Result<Vec<u8>, CliError> {
    let mut value: serde_json::Value = serde_json::from_slice(report_json)
        .map_err(|e| CliError::Runtime(format!("invalid report json: {e}")))?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("timing");
    }
    serde_json::to_vec(&value).map_err(|e| CliError::Runtime(e.to_string()))
}
