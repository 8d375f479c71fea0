//! Scalable Gaussian-process forecasting for wireless traffic.
//!
//! The crate trains composite-kernel GP models (weekly periodic + daily
//! periodic + squared exponential + observation noise) either centrally or
//! via consensus ADMM over K data shards, fuses per-shard predictions with a
//! robust Bayesian committee machine, and ships a synthetic traffic
//! generator plus the MAPE/RMSE metrics used to score forecasts.
//!
//! Modules:
//! * [`kernel`] — kernel composition, Gram matrices, analytic derivatives.
//! * [`gp`] — NLML and gradient, optimization, fitting, prediction.
//! * [`admm`] — sharding, the consensus loop, and the executor abstraction.
//! * [`fusion`] — rBCM fusion plus subset-of-data and centralized baselines.
//! * [`data`] — synthetic traffic, CSV I/O, splits, metrics.
//!
//! With the `parallel` feature (default) the in-process executor and the
//! rBCM expert fits run on the rayon pool; results are aggregated in
//! worker-index order either way, so outputs are bit-identical across modes.

pub mod admm;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gp;
pub mod kernel;

pub use error::{Error, Result};
