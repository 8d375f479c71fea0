//! Command implementations behind the CLI surface. Exit-code contract:
//! 0 success, 2 configuration error, 3 runtime error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use trafficgp_core::admm::{partition, run_admm, AdmmConfig, ExecMode};
use trafficgp_core::data::{self, generate_traffic, mape, rmse};
use trafficgp_core::fusion::{predict_with_strategy, FusionStrategy};
use trafficgp_core::gp::{minimize, Dataset, NlmlObjective};
use trafficgp_core::kernel::{default_theta, HyperParams};

use crate::config::{RunConfig, TrainMode};
use crate::report::{
    admm_timing, history_rows, write_json, BenchReport, BenchRow, EvalReport, Metrics,
    StrategyResult, Timing, TrainReport,
};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Runtime(msg) => write!(f, "runtime error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<trafficgp_core::Error> for CliError {
    fn from(e: trafficgp_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<trafficgp_cluster::ClusterError> for CliError {
    fn from(e: trafficgp_cluster::ClusterError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Materialize the dataset named by the config (synthetic or CSV).
pub fn resolve_dataset(config: &RunConfig) -> Result<Dataset, CliError> {
    if let Some(synthetic) = &config.data.synthetic {
        return Ok(generate_traffic(synthetic)?);
    }
    if let Some(csv) = &config.data.csv {
        return Ok(data::load_csv(csv)?);
    }
    Err(CliError::Config(
        "data section names neither 'synthetic' nor 'csv'".into(),
    ))
}

fn train_test_split(config: &RunConfig) -> Result<(Dataset, Dataset), CliError> {
    let dataset = resolve_dataset(config)?;
    Ok(data::split(&dataset, &config.data.split)?)
}

fn ensure_out_dir(out_dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))
}

/// `generate`: write the configured synthetic series as CSV.
pub fn cmd_generate(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let synthetic = config.data.synthetic.as_ref().ok_or_else(|| {
        CliError::Config("generate needs a data.synthetic section".into())
    })?;
    let dataset = generate_traffic(synthetic)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    data::save_csv(&dataset, out)?;
    println!("wrote {} rows to {}", dataset.len(), out.display());
    Ok(())
}

/// `train`: centralized optimize or consensus ADMM (in-process, or remote
/// when cluster endpoints are configured). Persists `report.json`; on a
/// runtime failure the report instead carries the error chain.
pub fn cmd_train(
    config: &RunConfig,
    out_dir: &Path,
    mode_override: Option<TrainMode>,
) -> Result<TrainReport, CliError> {
    train_inner(config, out_dir, mode_override).inspect_err(|e| {
        if matches!(e, CliError::Runtime(_)) {
            let error_report = serde_json::json!({
                "kind": "train",
                "status": "error",
                "config": config,
                "error": e.to_string(),
            });
            let _ = write_json(&error_report, &out_dir.join("report.json"));
        }
    })
}

fn train_inner(
    config: &RunConfig,
    out_dir: &Path,
    mode_override: Option<TrainMode>,
) -> Result<TrainReport, CliError> {
    ensure_out_dir(out_dir)?;
    let (train, _test) = train_test_split(config)?;
    let mode = mode_override.unwrap_or(config.train.mode);
    let started = Instant::now();

    let report = match mode {
        TrainMode::Centralized => {
            info!("centralized training on {} points", train.len());
            let objective = NlmlObjective::new(&train, &config.kernel)?;
            let result = minimize(
                &objective,
                default_theta(&config.kernel).raw(),
                &config.train.optim,
            )?;
            TrainReport {
                kind: "train".into(),
                mode,
                config: config.clone(),
                theta_star: result.theta,
                converged: None,
                iterations: result.iterations,
                objective_trace: Some(result.trace),
                history: None,
                timing: Timing {
                    total_s: started.elapsed().as_secs_f64(),
                    ..Timing::default()
                },
            }
        }
        TrainMode::Admm => {
            let result = match &config.cluster {
                Some(cluster) => {
                    info!(
                        "distributed ADMM over {} workers",
                        cluster.endpoints.len()
                    );
                    let endpoints = cluster
                        .endpoints
                        .iter()
                        .map(|e| e.parse())
                        .collect::<Result<Vec<trafficgp_cluster::Endpoint>, _>>()
                        .map_err(|e| CliError::Config(e.to_string()))?;
                    trafficgp_cluster::coordinator_run(
                        &train,
                        &config.kernel,
                        &config.train.admm,
                        &endpoints,
                    )?
                }
                None => {
                    info!(
                        "in-process ADMM with K={}",
                        config.train.admm.k_workers
                    );
                    run_admm(
                        &train,
                        &config.kernel,
                        &config.train.admm,
                        ExecMode::Parallel,
                    )?
                }
            };
            TrainReport {
                kind: "train".into(),
                mode,
                config: config.clone(),
                theta_star: result.z_star.raw().to_vec(),
                converged: Some(result.converged),
                iterations: result.state.iteration,
                objective_trace: None,
                history: Some(history_rows(&result)),
                timing: admm_timing(&result, started.elapsed().as_secs_f64()),
            }
        }
    };

    let path = out_dir.join("report.json");
    write_json(&report, &path)?;
    println!("wrote {}", path.display());
    Ok(report)
}

fn strategies_to_run(
    config: &RunConfig,
    strategy_override: Option<FusionStrategy>,
) -> Vec<FusionStrategy> {
    if let Some(s) = strategy_override {
        return vec![s];
    }
    if !config.predict.benchmark.is_empty() {
        return config.predict.benchmark.clone();
    }
    vec![config.predict.strategy]
}

fn write_predictions_csv(
    path: &Path,
    times: &[f64],
    actual: &[f64],
    mean: &[f64],
    variance: &[f64],
) -> Result<(), CliError> {
    let file = std::fs::File::create(path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| CliError::Runtime(format!("write {}: {e}", path.display()));
    writeln!(w, "time_h,actual,mean,variance").map_err(io_err)?;
    for i in 0..times.len() {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            times[i], actual[i], mean[i], variance[i]
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// `evaluate`: predict on the test split with one or more strategies, score
/// MAPE/RMSE, and persist per-point prediction CSVs plus `evaluation.json`.
pub fn cmd_evaluate(
    config: &RunConfig,
    trained: &TrainReport,
    out_dir: &Path,
    strategy_override: Option<FusionStrategy>,
) -> Result<EvalReport, CliError> {
    ensure_out_dir(out_dir)?;
    let (train, test) = train_test_split(config)?;
    let theta = HyperParams::from_raw(&config.kernel, trained.theta_star.clone())
        .map_err(|e| CliError::Runtime(format!("report theta does not fit kernel: {e}")))?;
    let strategies = strategies_to_run(config, strategy_override);

    let needs_shards = strategies
        .iter()
        .any(|s| matches!(s, FusionStrategy::Rbcm | FusionStrategy::Sod(_)));
    let shards = if needs_shards {
        partition(&train, &config.train.admm)?
    } else {
        Vec::new()
    };

    let started = Instant::now();
    let mut results = std::collections::BTreeMap::new();
    for strategy in strategies {
        let pred = predict_with_strategy(
            &strategy,
            &config.kernel,
            &theta,
            &train,
            &shards,
            test.times(),
        )?;
        let metrics = Metrics {
            mape_percent: mape(test.values(), &pred.mean)?,
            rmse: rmse(test.values(), &pred.mean)?,
        };
        let csv_name = format!("predictions_{strategy}.csv");
        write_predictions_csv(
            &out_dir.join(&csv_name),
            test.times(),
            test.values(),
            &pred.mean,
            &pred.variance,
        )?;
        info!(
            "{strategy}: mape {:.3}% rmse {:.4}",
            metrics.mape_percent, metrics.rmse
        );
        results.insert(
            strategy.to_string(),
            StrategyResult {
                strategy,
                metrics,
                predictions_csv: csv_name,
            },
        );
    }

    let report = EvalReport {
        kind: "evaluate".into(),
        config: config.clone(),
        theta_star: trained.theta_star.clone(),
        results,
        timing: Timing {
            total_s: started.elapsed().as_secs_f64(),
            ..Timing::default()
        },
    };
    let path = out_dir.join("evaluation.json");
    write_json(&report, &path)?;
    println!("wrote {}", path.display());
    Ok(report)
}

/// One scaling measurement: fixed outer iterations at worker count `k`,
/// the median over `repeats` runs of the mean per-worker local-update time.
pub fn scaling_row(
    train: &Dataset,
    config: &RunConfig,
    k: usize,
    outer_iterations: usize,
    repeats: usize,
) -> Result<BenchRow, CliError> {
    let cfg = AdmmConfig {
        k_workers: k,
        max_outer: outer_iterations,
        // Zero tolerances: run exactly the fixed iteration budget.
        eps_abs: 0.0,
        eps_rel: 0.0,
        ..config.train.admm.clone()
    };
    let mut mean_ms = Vec::with_capacity(repeats);
    let mut total_s = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        let started = Instant::now();
        let result = run_admm(train, &config.kernel, &cfg, ExecMode::Parallel)?;
        total_s.push(started.elapsed().as_secs_f64());
        mean_ms.push(result.mean_update_ms());
    }
    Ok(BenchRow {
        k,
        mean_local_update_ms: median(&mut mean_ms),
        total_train_s: median(&mut total_s),
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

/// `benchmark`: per-iteration local-update cost across worker counts,
/// emitted as plot-ready CSV plus `benchmark.json`.
pub fn cmd_benchmark(
    config: &RunConfig,
    k_list: &[usize],
    out_dir: &Path,
    outer_iterations: usize,
    repeats: usize,
) -> Result<BenchReport, CliError> {
    if k_list.is_empty() {
        return Err(CliError::Config("k-list is empty".into()));
    }
    ensure_out_dir(out_dir)?;
    let train = resolve_dataset(config)?;
    let max_k = *k_list.iter().max().expect("non-empty k list");
    if train.len() < 8 * max_k {
        return Err(CliError::Runtime(
            trafficgp_core::Error::InsufficientData {
                n: train.len(),
                k: max_k,
                min: 8 * max_k,
            }
            .to_string(),
        ));
    }

    let started = Instant::now();
    let mut rows = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let row = scaling_row(&train, config, k, outer_iterations, repeats)?;
        info!(
            "K={k}: mean local update {:.2} ms, total {:.2} s",
            row.mean_local_update_ms, row.total_train_s
        );
        rows.push(row);
    }

    let csv_path = out_dir.join("benchmark.csv");
    {
        let file = std::fs::File::create(&csv_path)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", csv_path.display())))?;
        let mut w = std::io::BufWriter::new(file);
        let io_err =
            |e: std::io::Error| CliError::Runtime(format!("write {}: {e}", csv_path.display()));
        writeln!(w, "k,mean_local_update_ms,total_train_s").map_err(io_err)?;
        for row in &rows {
            writeln!(
                w,
                "{},{:.6},{:.6}",
                row.k, row.mean_local_update_ms, row.total_train_s
            )
            .map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
    }

    let report = BenchReport {
        kind: "benchmark".into(),
        config: config.clone(),
        outer_iterations,
        repeats,
        rows,
        csv: "benchmark.csv".into(),
        timing: Timing {
            total_s: started.elapsed().as_secs_f64(),
            ..Timing::default()
        },
    };
    let path = out_dir.join("benchmark.json");
    write_json(&report, &path)?;
    println!("wrote {} and {}", path.display(), csv_path.display());
    Ok(report)
}

/// Parse `--strategy` values: `rbcm`, `centralized`, or `sod:K`.
pub fn parse_strategy(s: &str) -> Result<FusionStrategy, String> {
    match s {
        "rbcm" => Ok(FusionStrategy::Rbcm),
        "centralized" => Ok(FusionStrategy::Centralized),
        other => {
            if let Some(k) = other.strip_prefix("sod:") {
                k.parse::<usize>()
                    .map(FusionStrategy::Sod)
                    .map_err(|_| format!("invalid sod worker id in '{other}'"))
            } else {
                Err(format!(
                    "unknown strategy '{other}' (use rbcm|centralized|sod:K)"
                ))
            }
        }
    }
}

/// Resolve the output directory: `--out` wins, then the config's `output`.
pub fn resolve_out_dir(
    cli_out: Option<PathBuf>,
    config: &RunConfig,
) -> Result<PathBuf, CliError> {
    cli_out
        .or_else(|| config.output.clone())
        .ok_or_else(|| CliError::Config("no output directory (--out or config.output)".into()))
}
