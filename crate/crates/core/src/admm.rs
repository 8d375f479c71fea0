//! Consensus-ADMM training loop.
//!
//! The dataset is split into K disjoint shards; each outer iteration runs a
//! proximal NLML minimization per worker (warm-started, inexact), averages
//! the local estimates plus duals into a global consensus vector, updates the
//! scaled duals, and stops on primal/dual residual thresholds.
//!
//! The loop controller is single-threaded. Local updates within an iteration
//! are independent pure computations; the in-process executor runs them on a
//! rayon pool when the `parallel` feature is enabled. Results are always
//! aggregated in worker-index order, so the outcome is independent of
//! completion order.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{Dataset, NlmlObjective, Objective, OptimConfig, Prox};
use crate::kernel::{default_theta, HyperParams, KernelSpec};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How the training set is divided among workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    /// Worker k takes indices {i : i mod K == k}; every shard sees the full
    /// weekly/daily coverage.
    Strided,
    /// Contiguous runs, sizes balanced to within one point.
    Block,
}

/// Configuration of one ADMM run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmmConfig {
    #[serde(default = "default_k_workers")]
    pub k_workers: usize,
    /// Augmented-Lagrangian penalty; 1.0 suits standardized data.
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_eps_abs")]
    pub eps_abs: f64,
    #[serde(default = "default_eps_rel")]
    pub eps_rel: f64,
    /// Inner solver budget for each local update (inexact solves).
    #[serde(default = "default_inner")]
    pub inner: OptimConfig,
    #[serde(default = "default_partition")]
    pub partition: PartitionScheme,
    /// Recorded with every run so reports are reproducible.
    #[serde(default)]
    pub seed: u64,
}

fn default_k_workers() -> usize {
    4
}
fn default_rho() -> f64 {
    1.0
}
fn default_max_outer() -> usize {
    50
}
fn default_eps_abs() -> f64 {
    1e-4
}
fn default_eps_rel() -> f64 {
    1e-3
}
fn default_inner() -> OptimConfig {
    OptimConfig {
        max_iters: 25,
        ..OptimConfig::default()
    }
}
fn default_partition() -> PartitionScheme {
    PartitionScheme::Strided
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            k_workers: default_k_workers(),
            rho: default_rho(),
            max_outer: default_max_outer(),
            eps_abs: default_eps_abs(),
            eps_rel: default_eps_rel(),
            inner: default_inner(),
            partition: default_partition(),
            seed: 0,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_workers == 0 {
            return Err(Error::InvalidConfig("k_workers must be >= 1".into()));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidConfig("rho must be positive".into()));
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidConfig("max_outer must be positive".into()));
        }
        if !(self.eps_abs >= 0.0 && self.eps_rel >= 0.0) {
            return Err(Error::InvalidConfig(
                "residual tolerances must be nonnegative".into(),
            ));
        }
        self.inner.validate()
    }
}

/// One worker's disjoint subset of the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub worker_id: usize,
    /// Positions of the shard's points in the original dataset.
    pub indices: Vec<usize>,
    pub data: Dataset,
}

/// Split `data` into `cfg.k_workers` disjoint shards covering it exactly.
pub fn partition(data: &Dataset, cfg: &AdmmConfig) -> Result<Vec<Shard>> {
    cfg.validate()?;
    let n = data.len();
    let k = cfg.k_workers;
    if n < 8 * k {
        return Err(Error::InsufficientData { n, k, min: 8 * k });
    }
    let index_sets: Vec<Vec<usize>> = match cfg.partition {
        PartitionScheme::Strided => (0..k)
            .map(|w| (w..n).step_by(k).collect())
            .collect(),
        PartitionScheme::Block => {
            let base = n / k;
            let extra = n % k;
            let mut start = 0;
            (0..k)
                .map(|w| {
                    let size = base + usize::from(w < extra);
                    let idx = (start..start + size).collect();
                    start += size;
                    idx
                })
                .collect()
        }
    };
    index_sets
        .into_iter()
        .enumerate()
        .map(|(worker_id, indices)| {
            let times = indices.iter().map(|&i| data.times()[i]).collect();
            let values = indices.iter().map(|&i| data.values()[i]).collect();
            Ok(Shard {
                worker_id,
                indices,
                data: Dataset::new(times, values)?,
            })
        })
        .collect()
}

/// Result of one local proximal minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub theta: Vec<f64>,
    /// Local objective value at `theta`, without the prox term.
    pub objective: f64,
    pub wall_ms: f64,
}

/// Solve `argmin_theta f(theta) + (rho/2) ||theta - z + u||^2`, warm-started
/// at `warm`. If the solve fails once it is retried from `z`; a second
/// failure propagates.
pub fn local_update(
    objective: &dyn Objective,
    warm: &[f64],
    z: &[f64],
    u: &[f64],
    rho: f64,
    inner: &OptimConfig,
) -> Result<LocalUpdate> {
    let dim = objective.dim();
    for len in [warm.len(), z.len(), u.len()] {
        if len != dim {
            return Err(Error::ShapeMismatch {
                context: "local_update",
                expected: dim,
                got: len,
            });
        }
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidConfig("rho must be positive".into()));
    }
    let anchor: Vec<f64> = z.iter().zip(u).map(|(zi, ui)| zi - ui).collect();
    let cfg = inner.clone().with_prox(Prox {
        rho,
        anchor: anchor.clone(),
    });

    let start = Instant::now();
    let result = minimize_with_retry(objective, warm, z, &cfg)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;

    let prox_value = 0.5
        * rho
        * result
            .theta
            .iter()
            .zip(&anchor)
            .map(|(t, a)| (t - a) * (t - a))
            .sum::<f64>();
    Ok(LocalUpdate {
        objective: result.value - prox_value,
        theta: result.theta,
        wall_ms,
    })
}

fn minimize_with_retry(
    objective: &dyn Objective,
    warm: &[f64],
    z: &[f64],
    cfg: &OptimConfig,
) -> Result<crate::gp::MinimizeResult> {
    match crate::gp::minimize(objective, warm, cfg) {
        Ok(r) => Ok(r),
        Err(_) => crate::gp::minimize(objective, z, cfg),
    }
}

/// Consensus average: `z = mean_k(theta_k + u_k)`, accumulated in
/// worker-index order. The inputs are the per-worker sums `theta_k + u_k`.
pub fn global_update(locals_plus_duals: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = locals_plus_duals
        .first()
        .ok_or(Error::EmptyInput("global_update"))?;
    let dim = first.len();
    let mut z = vec![0.0; dim];
    for v in locals_plus_duals {
        if v.len() != dim {
            return Err(Error::ShapeMismatch {
                context: "global_update",
                expected: dim,
                got: v.len(),
            });
        }
        for (zi, vi) in z.iter_mut().zip(v) {
            *zi += vi;
        }
    }
    let k = locals_plus_duals.len() as f64;
    for zi in &mut z {
        *zi /= k;
    }
    Ok(z)
}

/// Scaled dual ascent: `u' = u + theta - z`.
pub fn dual_update(u: &[f64], theta: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    if theta.len() != u.len() || z.len() != u.len() {
        return Err(Error::ShapeMismatch {
            context: "dual_update",
            expected: u.len(),
            got: theta.len().max(z.len()),
        });
    }
    // u + (theta - z): keeps u bit-identical at the theta == z fixed point.
    Ok(u.iter()
        .zip(theta)
        .zip(z)
        .map(|((ui, ti), zi)| ui + (ti - zi))
        .collect())
}

/// Primal and dual residuals:
/// `r = sqrt(sum_k ||theta_k - z||^2)`, `s = rho * sqrt(K) * ||z - z_prev||`.
pub fn residuals(thetas: &[Vec<f64>], z: &[f64], z_prev: &[f64], rho: f64) -> (f64, f64) {
    let r = thetas
        .iter()
        .map(|t| {
            t.iter()
                .zip(z)
                .map(|(ti, zi)| (ti - zi) * (ti - zi))
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt();
    let dz: f64 = z
        .iter()
        .zip(z_prev)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let s = rho * (thetas.len() as f64).sqrt() * dz;
    (r, s)
}

/// Per-iteration diagnostics recorded by the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub mean_local_objective: f64,
    pub wall_ms: f64,
}

/// One worker's mutable loop state.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub theta: Vec<f64>,
    pub dual: Vec<f64>,
}

/// Global consensus state at the end of a run.
#[derive(Debug, Clone)]
pub struct ConsensusState {
    pub z: HyperParams,
    pub iteration: usize,
    pub history: Vec<IterationStats>,
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub z_star: HyperParams,
    pub converged: bool,
    pub state: ConsensusState,
    /// Wall time of every local update, iteration-major: `[iteration][worker]`.
    pub update_wall_ms: Vec<Vec<f64>>,
}

impl TrainResult {
    /// Mean local-update wall time over all workers and iterations.
    pub fn mean_update_ms(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for round in &self.update_wall_ms {
            for ms in round {
                total += ms;
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }
}

/// One synchronized round of local updates for all workers.
///
/// Implementations: [`InProcessExecutor`] (same address space) and the
/// remote executor in the cluster runtime. Both must satisfy identical
/// request/response semantics: given the same `z` and duals they return the
/// same per-worker results, in worker-index order.
pub trait Executor {
    fn num_workers(&self) -> usize;

    fn dim(&self) -> usize;

    fn round(
        &mut self,
        z: &[f64],
        duals: &[Vec<f64>],
        iteration: usize,
    ) -> Result<Vec<LocalUpdate>>;
}

/// Whether the in-process executor runs local updates on the rayon pool or
/// sequentially. Without the `parallel` feature, `Parallel` falls back to
/// sequential execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

struct WorkerSlot {
    objective: Box<dyn Objective>,
    warm: Option<Vec<f64>>,
}

/// Executor that evaluates every worker's local update in this process.
pub struct InProcessExecutor {
    workers: Vec<WorkerSlot>,
    rho: f64,
    inner: OptimConfig,
    mode: ExecMode,
    dim: usize,
}

impl InProcessExecutor {
    pub fn new(
        objectives: Vec<Box<dyn Objective>>,
        rho: f64,
        inner: OptimConfig,
        mode: ExecMode,
    ) -> Result<Self> {
        let first_dim = objectives
            .first()
            .ok_or(Error::EmptyInput("executor objectives"))?
            .dim();
        if objectives.iter().any(|o| o.dim() != first_dim) {
            return Err(Error::ShapeMismatch {
                context: "executor objective dimensions",
                expected: first_dim,
                got: 0,
            });
        }
        Ok(Self {
            workers: objectives
                .into_iter()
                .map(|objective| WorkerSlot {
                    objective,
                    warm: None,
                })
                .collect(),
            rho,
            inner,
            mode,
            dim: first_dim,
        })
    }

    /// Build per-shard NLML objectives at the shards' own standardization.
    pub fn for_shards(shards: &[Shard], spec: &KernelSpec, cfg: &AdmmConfig, mode: ExecMode) -> Result<Self> {
        let objectives = shards
            .iter()
            .map(|s| {
                NlmlObjective::new(&s.data, spec)
                    .map(|o| Box::new(o) as Box<dyn Objective>)
                    .map_err(|e| Error::Worker {
                        worker_id: s.worker_id,
                        detail: e.to_string(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(objectives, cfg.rho, cfg.inner.clone(), mode)
    }

    fn run_slot(
        slot: &mut WorkerSlot,
        z: &[f64],
        u: &[f64],
        rho: f64,
        inner: &OptimConfig,
    ) -> Result<LocalUpdate> {
        let warm_owned;
        let warm: &[f64] = match &slot.warm {
            Some(w) => w,
            None => {
                warm_owned = z.to_vec();
                &warm_owned
            }
        };
        let update = local_update(slot.objective.as_ref(), warm, z, u, rho, inner)?;
        slot.warm = Some(update.theta.clone());
        Ok(update)
    }
}

impl Executor for InProcessExecutor {
    fn num_workers(&self) -> usize {
        self.workers.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn round(
        &mut self,
        z: &[f64],
        duals: &[Vec<f64>],
        _iteration: usize,
    ) -> Result<Vec<LocalUpdate>> {
        if duals.len() != self.workers.len() {
            return Err(Error::ShapeMismatch {
                context: "executor round duals",
                expected: self.workers.len(),
                got: duals.len(),
            });
        }
        let rho = self.rho;
        let inner = self.inner.clone();

        let results: Vec<Result<LocalUpdate>> = match self.mode {
            #[cfg(feature = "parallel")]
            ExecMode::Parallel => self
                .workers
                .par_iter_mut()
                .zip(duals.par_iter())
                .map(|(slot, u)| Self::run_slot(slot, z, u, rho, &inner))
                .collect(),
            _ => self
                .workers
                .iter_mut()
                .zip(duals.iter())
                .map(|(slot, u)| Self::run_slot(slot, z, u, rho, &inner))
                .collect(),
        };

        results
            .into_iter()
            .enumerate()
            .map(|(worker_id, r)| {
                r.map_err(|e| Error::Worker {
                    worker_id,
                    detail: e.to_string(),
                })
            })
            .collect()
    }
}

/// Run the consensus loop against any executor, starting from `z0`.
///
/// Initializes `theta_k = z0` (via the executors' first-round warm start) and
/// `u_k = 0`, then iterates local updates, the averaging z-update, dual
/// updates, and residual bookkeeping until the stopping rule or `max_outer`.
pub fn drive(executor: &mut dyn Executor, z0: &HyperParams, cfg: &AdmmConfig) -> Result<TrainResult> {
    cfg.validate()?;
    let k = executor.num_workers();
    let dim = z0.dim();
    if dim != executor.dim() {
        return Err(Error::ShapeMismatch {
            context: "drive z0",
            expected: executor.dim(),
            got: dim,
        });
    }

    let mut z = z0.raw().to_vec();
    let mut workers: Vec<WorkerState> = (0..k)
        .map(|_| WorkerState {
            theta: z.clone(),
            dual: vec![0.0; dim],
        })
        .collect();
    let mut history: Vec<IterationStats> = Vec::new();
    let mut update_wall_ms: Vec<Vec<f64>> = Vec::new();
    let mut converged = false;

    for iteration in 0..cfg.max_outer {
        let round_start = Instant::now();
        let duals: Vec<Vec<f64>> = workers.iter().map(|w| w.dual.clone()).collect();
        let updates = match executor.round(&z, &duals, iteration) {
            Ok(u) => u,
            Err(Error::Worker { worker_id, detail }) => {
                return Err(Error::AbortedRun {
                    worker_id,
                    iteration,
                    detail,
                    history,
                });
            }
            Err(e) => return Err(e),
        };
        if updates.len() != k {
            return Err(Error::ShapeMismatch {
                context: "executor round results",
                expected: k,
                got: updates.len(),
            });
        }

        update_wall_ms.push(updates.iter().map(|u| u.wall_ms).collect());
        let mean_local_objective =
            updates.iter().map(|u| u.objective).sum::<f64>() / k as f64;
        for (w, u) in workers.iter_mut().zip(&updates) {
            if u.theta.len() != dim {
                return Err(Error::ShapeMismatch {
                    context: "local update theta",
                    expected: dim,
                    got: u.theta.len(),
                });
            }
            w.theta = u.theta.clone();
        }

        let z_prev = z.clone();
        let sums: Vec<Vec<f64>> = workers
            .iter()
            .map(|w| w.theta.iter().zip(&w.dual).map(|(t, u)| t + u).collect())
            .collect();
        z = global_update(&sums)?;
        for w in workers.iter_mut() {
            w.dual = dual_update(&w.dual, &w.theta, &z)?;
        }

        let thetas: Vec<Vec<f64>> = workers.iter().map(|w| w.theta.clone()).collect();
        let (r, s) = residuals(&thetas, &z, &z_prev, cfg.rho);
        history.push(IterationStats {
            primal_residual: r,
            dual_residual: s,
            mean_local_objective,
            wall_ms: round_start.elapsed().as_secs_f64() * 1e3,
        });

        // Boyd-style thresholds on the stacked vectors.
        let sqrt_kd = ((k * dim) as f64).sqrt();
        let stacked_theta = workers
            .iter()
            .map(|w| w.theta.iter().map(|t| t * t).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let stacked_z = (k as f64).sqrt() * norm(&z);
        let stacked_dual = workers
            .iter()
            .map(|w| w.dual.iter().map(|u| u * u).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let eps_pri = sqrt_kd * cfg.eps_abs + cfg.eps_rel * stacked_theta.max(stacked_z);
        let eps_dual = sqrt_kd * cfg.eps_abs + cfg.eps_rel * cfg.rho * stacked_dual;
        if r <= eps_pri && s <= eps_dual {
            converged = true;
            break;
        }
    }

    Ok(TrainResult {
        z_star: HyperParams::from_vec_unchecked(z.clone()),
        converged,
        state: ConsensusState {
            z: HyperParams::from_vec_unchecked(z),
            iteration: history.len(),
            history,
        },
        update_wall_ms,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Partition `data`, build per-shard NLML objectives, and run the consensus
/// loop with the in-process executor starting from the default theta.
pub fn run_admm(
    data: &Dataset,
    spec: &KernelSpec,
    cfg: &AdmmConfig,
    mode: ExecMode,
) -> Result<TrainResult> {
    spec.validate()?;
    cfg.validate()?;
    let z0 = default_theta(spec);
    let min_shard = 8.max(z0.dim() + 1);
    let shards = partition(data, cfg)?;
    if let Some(small) = shards.iter().find(|s| s.data.len() < min_shard) {
        return Err(Error::InsufficientData {
            n: small.data.len(),
            k: cfg.k_workers,
            min: min_shard,
        });
    }
    let mut executor = InProcessExecutor::for_shards(&shards, spec, cfg, mode)?;
    drive(&mut executor, &z0, cfg)
}
