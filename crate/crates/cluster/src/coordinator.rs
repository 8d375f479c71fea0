//! Coordinator role: connection lifecycle, shard delivery, and the
//! per-iteration barrier that drives `run_admm` over remote workers.
//!
//! One TCP connection per worker, coordinator-initiated. Each round
//! broadcasts `LocalUpdateRequest` to every worker and then awaits all
//! responses in worker-index order; iteration i+1 requests are never sent
//! before every iteration-i response has arrived.

use std::net::TcpStream;
use std::time::Duration;

use log::{info, warn};
use trafficgp_core::admm::{drive, partition, AdmmConfig, Executor, LocalUpdate, TrainResult};
use trafficgp_core::fusion::ExpertPrediction;
use trafficgp_core::gp::Dataset;
use trafficgp_core::kernel::{default_theta, KernelSpec};
use trafficgp_core::Error as CoreError;

use crate::error::{ClusterError, Result};
use crate::protocol::{Endpoint, FramedStream, Message};

/// Connection deadlines. The round timeout bounds each worker's response to
/// one synchronous barrier.
#[derive(Debug, Clone, Copy)]
pub struct Timeouts {
    pub connect: Duration,
    pub round: Duration,
}

impl Default for Timeouts {
    fn default() -> Self {
        Self {
            connect: Duration::from_secs(10),
            round: Duration::from_secs(300),
        }
    }
}

/// Coordinator-side handle on K connected workers, usable as an ADMM
/// executor.
pub struct RemoteCluster {
    conns: Vec<FramedStream>,
    dim: usize,
}

impl RemoteCluster {
    /// Connect to every endpoint within the connect timeout.
    pub fn connect(endpoints: &[Endpoint], timeouts: Timeouts, dim: usize) -> Result<Self> {
        let mut conns = Vec::with_capacity(endpoints.len());
        for (worker_id, ep) in endpoints.iter().enumerate() {
            let addr = ep
                .addr()
                .parse()
                .map_err(|_| ClusterError::InvalidEndpoint(ep.addr()))?;
            let stream = TcpStream::connect_timeout(&addr, timeouts.connect).map_err(|e| {
                ClusterError::WorkerUnreachable {
                    worker_id,
                    addr: ep.addr(),
                    detail: e.to_string(),
                }
            })?;
            stream.set_nodelay(true)?;
            stream.set_read_timeout(Some(timeouts.round))?;
            info!("connected to worker {worker_id} at {ep}");
            conns.push(FramedStream::new(stream));
        }
        Ok(Self { conns, dim })
    }

    /// Deliver spec, shard, and config to every worker. Workers reply only
    /// on failure, which surfaces at the first round.
    pub fn init(
        &mut self,
        spec: &KernelSpec,
        shards: &[trafficgp_core::admm::Shard],
        cfg: &AdmmConfig,
    ) -> Result<()> {
        if shards.len() != self.conns.len() {
            return Err(ClusterError::Config(format!(
                "{} shards for {} workers",
                shards.len(),
                self.conns.len()
            )));
        }
        for (conn, shard) in self.conns.iter_mut().zip(shards) {
            conn.send(&Message::Init {
                spec: spec.clone(),
                shard: shard.into(),
                cfg: cfg.clone(),
            })?;
        }
        Ok(())
    }

    /// Fit each worker's shard at `z` and gather the expert predictions, in
    /// worker-index order.
    pub fn gather_expert_predictions(
        &mut self,
        z: &[f64],
        query_times: &[f64],
    ) -> Result<Vec<ExpertPrediction>> {
        for conn in self.conns.iter_mut() {
            conn.send(&Message::PredictRequest {
                z: z.to_vec(),
                query_times: query_times.to_vec(),
            })?;
        }
        let mut experts = Vec::with_capacity(self.conns.len());
        for (worker_id, conn) in self.conns.iter_mut().enumerate() {
            match conn.recv()? {
                Message::PredictResponse { mean, variance } => experts.push(ExpertPrediction {
                    worker_id,
                    mean,
                    variance,
                }),
                Message::Error { code, detail } => {
                    return Err(ClusterError::Core(CoreError::Worker {
                        worker_id,
                        detail: format!("{code}: {detail}"),
                    }))
                }
                other => {
                    return Err(ClusterError::StateMachine(format!(
                        "worker {worker_id} sent {other:?} instead of PredictResponse"
                    )))
                }
            }
        }
        Ok(experts)
    }

    /// Best-effort shutdown broadcast.
    pub fn shutdown(&mut self) {
        for (worker_id, conn) in self.conns.iter_mut().enumerate() {
            if let Err(e) = conn.send(&Message::Shutdown) {
                warn!("shutdown to worker {worker_id} failed: {e}");
            }
        }
    }
}

impl Executor for RemoteCluster {
    fn num_workers(&self) -> usize {
        self.conns.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn round(
        &mut self,
        z: &[f64],
        duals: &[Vec<f64>],
        iteration: usize,
    ) -> trafficgp_core::Result<Vec<LocalUpdate>> {
        let transport = |worker_id: usize, detail: String| CoreError::Worker { worker_id, detail };

        for (worker_id, (conn, u)) in self.conns.iter_mut().zip(duals).enumerate() {
            conn.send(&Message::LocalUpdateRequest {
                z: z.to_vec(),
                u_k: u.clone(),
                iteration: iteration as u64,
            })
            .map_err(|e| transport(worker_id, format!("send failed: {e}")))?;
        }

        let mut updates = Vec::with_capacity(self.conns.len());
        for (worker_id, conn) in self.conns.iter_mut().enumerate() {
            let msg = conn
                .recv()
                .map_err(|e| transport(worker_id, format!("receive failed: {e}")))?;
            match msg {
                Message::LocalUpdateResponse {
                    theta_k,
                    local_objective,
                    wall_ms,
                } => updates.push(LocalUpdate {
                    theta: theta_k,
                    objective: local_objective,
                    wall_ms,
                }),
                Message::Error { code, detail } => {
                    return Err(transport(worker_id, format!("{code}: {detail}")))
                }
                other => {
                    return Err(transport(
                        worker_id,
                        format!("unexpected reply {other:?}"),
                    ))
                }
            }
        }
        Ok(updates)
    }
}

/// Distributed `run_admm`: partition `data`, deliver shards to the workers
/// at `endpoints`, drive the consensus loop over the wire, and shut the
/// workers down (best effort) regardless of the outcome.
pub fn coordinator_run(
    data: &Dataset,
    spec: &KernelSpec,
    cfg: &AdmmConfig,
    endpoints: &[Endpoint],
) -> Result<TrainResult> {
    coordinator_run_with(data, spec, cfg, endpoints, Timeouts::default())
}

pub fn coordinator_run_with(
    data: &Dataset,
    spec: &KernelSpec,
    cfg: &AdmmConfig,
    endpoints: &[Endpoint],
    timeouts: Timeouts,
) -> Result<TrainResult> {
    spec.validate().map_err(ClusterError::Core)?;
    cfg.validate().map_err(ClusterError::Core)?;
    if endpoints.len() != cfg.k_workers {
        return Err(ClusterError::Config(format!(
            "config names {} workers but {} endpoints were given",
            cfg.k_workers,
            endpoints.len()
        )));
    }
    let z0 = default_theta(spec);
    let shards = partition(data, cfg).map_err(ClusterError::Core)?;
    let min_shard = 8.max(z0.dim() + 1);
    if let Some(small) = shards.iter().find(|s| s.data.len() < min_shard) {
        return Err(ClusterError::Core(CoreError::InsufficientData {
            n: small.data.len(),
            k: cfg.k_workers,
            min: min_shard,
        }));
    }

    let mut cluster = RemoteCluster::connect(endpoints, timeouts, z0.dim())?;
    cluster.init(spec, &shards, cfg)?;
    let result = drive(&mut cluster, &z0, cfg);
    cluster.shutdown();
    result.map_err(ClusterError::Core)
}
