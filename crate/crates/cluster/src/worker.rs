//! Worker role: a single-threaded request/response loop over one
//! coordinator connection.
//!
//! Lifecycle: bind, accept one connection, then serve messages until
//! `Shutdown`. `Init` stores the shard and configuration (no ack is sent;
//! only failures produce a reply). Each `LocalUpdateRequest` runs one
//! proximal local update, warm-started from the previous iterate, and
//! answers with exactly one `LocalUpdateResponse`. `PredictRequest` fits the
//! shard at the supplied consensus vector and answers with the expert
//! prediction. Out-of-order or duplicate messages are rejected
//! deterministically with an `Error` reply, after which the worker exits
//! nonzero.

use std::net::{TcpListener, TcpStream};

use log::{debug, info};
use trafficgp_core::admm::{local_update, AdmmConfig, Shard};
use trafficgp_core::gp::{self, NlmlObjective};
use trafficgp_core::kernel::{HyperParams, KernelSpec};

use crate::error::{ClusterError, Result};
use crate::protocol::{FramedStream, Message};

struct WorkerRuntime {
    spec: KernelSpec,
    shard: Shard,
    cfg: AdmmConfig,
    objective: NlmlObjective,
    warm: Option<Vec<f64>>,
    last_iteration: Option<u64>,
}

/// Bind `addr`, accept one coordinator connection, and serve it until
/// `Shutdown`. Returns an error (nonzero exit at the CLI) on any protocol
/// violation or internal failure.
pub fn worker_serve(addr: &str) -> Result<()> {
    let listener = TcpListener::bind(addr)?;
    worker_serve_listener(listener)
}

/// Like [`worker_serve`] but on an already-bound listener (lets tests use
/// ephemeral ports).
pub fn worker_serve_listener(listener: TcpListener) -> Result<()> {
    info!("worker listening on {}", listener.local_addr()?);
    let (stream, peer) = listener.accept()?;
    info!("coordinator connected from {peer}");
    stream.set_nodelay(true)?;
    serve_connection(stream)
}

fn serve_connection(stream: TcpStream) -> Result<()> {
    let mut conn = FramedStream::new(stream);
    let mut runtime: Option<WorkerRuntime> = None;

    loop {
        let msg = conn.recv()?;
        match msg {
            Message::Shutdown => {
                info!("shutdown received");
                return Ok(());
            }
            Message::Init { spec, shard, cfg } => {
                if runtime.is_some() {
                    return refuse(&mut conn, "ALREADY_INITIALIZED", "duplicate Init");
                }
                match build_runtime(spec, shard, cfg) {
                    Ok(rt) => {
                        debug!(
                            "initialized: worker {} with {} points",
                            rt.shard.worker_id,
                            rt.shard.data.len()
                        );
                        runtime = Some(rt);
                    }
                    Err(e) => return refuse(&mut conn, "INIT_FAILED", &e.to_string()),
                }
            }
            Message::LocalUpdateRequest { z, u_k, iteration } => {
                let Some(rt) = runtime.as_mut() else {
                    return refuse(&mut conn, "NOT_INITIALIZED", "LocalUpdateRequest before Init");
                };
                if let Some(last) = rt.last_iteration {
                    if iteration <= last {
                        return refuse(
                            &mut conn,
                            "OUT_OF_ORDER",
                            &format!("iteration {iteration} after {last}"),
                        );
                    }
                }
                let warm = rt.warm.as_deref().unwrap_or(&z);
                match local_update(&rt.objective, warm, &z, &u_k, rt.cfg.rho, &rt.cfg.inner) {
                    Ok(update) => {
                        rt.warm = Some(update.theta.clone());
                        rt.last_iteration = Some(iteration);
                        conn.send(&Message::LocalUpdateResponse {
                            theta_k: update.theta,
                            local_objective: update.objective,
                            wall_ms: update.wall_ms,
                        })?;
                    }
                    Err(e) => return refuse(&mut conn, "LOCAL_UPDATE_FAILED", &e.to_string()),
                }
            }
            Message::PredictRequest { z, query_times } => {
                let Some(rt) = runtime.as_ref() else {
                    return refuse(&mut conn, "NOT_INITIALIZED", "PredictRequest before Init");
                };
                let result = HyperParams::from_raw(&rt.spec, z)
                    .and_then(|theta| gp::fit(&rt.shard.data, &rt.spec, &theta))
                    .map(|model| model.predict(&query_times));
                match result {
                    Ok(pred) => conn.send(&Message::PredictResponse {
                        mean: pred.mean,
                        variance: pred.variance,
                    })?,
                    Err(e) => return refuse(&mut conn, "PREDICT_FAILED", &e.to_string()),
                }
            }
            other => {
                return refuse(
                    &mut conn,
                    "UNEXPECTED_MESSAGE",
                    &format!("worker cannot handle {other:?}"),
                );
            }
        }
    }
}

fn build_runtime(
    spec: KernelSpec,
    shard: crate::protocol::WireShard,
    cfg: AdmmConfig,
) -> Result<WorkerRuntime> {
    spec.validate().map_err(ClusterError::Core)?;
    cfg.validate().map_err(ClusterError::Core)?;
    let shard: Shard = shard.try_into().map_err(ClusterError::Core)?;
    let objective = NlmlObjective::new(&shard.data, &spec).map_err(ClusterError::Core)?;
    Ok(WorkerRuntime {
        spec,
        shard,
        cfg,
        objective,
        warm: None,
        last_iteration: None,
    })
}

/// Report a fatal condition to the coordinator and fail the worker.
fn refuse(conn: &mut FramedStream, code: &str, detail: &str) -> Result<()> {
    let _ = conn.send(&Message::Error {
        code: code.to_string(),
        detail: detail.to_string(),
    });
    Err(ClusterError::StateMachine(format!("{code}: {detail}")))
}
