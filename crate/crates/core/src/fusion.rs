//! Prediction-time aggregation: rBCM fusion of per-shard experts under
//! shared consensus hyperparameters, plus subset-of-data and centralized
//! baselines.
//!
//! Fusion runs per query point in standardized units (zero prior mean) and
//! the result is rescaled to original units. Expert fits may run
//! concurrently; aggregation always follows worker-index order.

use serde::{Deserialize, Serialize};

use crate::admm::Shard;
use crate::error::{Error, Result};
use crate::gp::{self, Dataset, PredictiveDistribution, Standardization};
use crate::kernel::{HyperParams, KernelSpec};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// One shard model's predictions at the query points, in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertPrediction {
    pub worker_id: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Prediction-time aggregation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionStrategy {
    /// Robust Bayesian committee machine over per-shard experts.
    Rbcm,
    /// Train and predict on a single shard.
    Sod(usize),
    /// Fit one model on the full training set.
    Centralized,
}

impl std::fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FusionStrategy::Rbcm => write!(f, "rbcm"),
            FusionStrategy::Sod(k) => write!(f, "sod_{k}"),
            FusionStrategy::Centralized => write!(f, "centralized"),
        }
    }
}

/// Prior predictive variance at any point under a stationary kernel, in
/// standardized units: the sum of term amplitudes squared plus the noise
/// variance.
pub fn prior_variance(spec: &KernelSpec, theta: &HyperParams) -> Result<f64> {
    if theta.dim() != spec.theta_dim() {
        return Err(Error::ShapeMismatch {
            context: "prior_variance",
            expected: spec.theta_dim(),
            got: theta.dim(),
        });
    }
    let terms: f64 = (0..spec.terms.len())
        .map(|i| (2.0 * theta.log_amplitude(i)).exp())
        .sum();
    Ok(terms + theta.noise_variance())
}

/// Fuse expert predictions with rBCM weights `beta_k = 0.5 (ln prior_var -
/// ln var_k)` and a prior-precision correction, per query point:
///
/// `precision = sum_k beta_k / var_k + (1 - sum_k beta_k) / prior_var`
/// `mean = variance * sum_k beta_k mean_k / var_k`
///
/// The fused precision is clamped below at `1e-6 / prior_var`. Inputs are
/// expected in a common (standardized) unit system with zero prior mean.
pub fn rbcm_fuse(experts: &[ExpertPrediction], prior_var: f64) -> Result<PredictiveDistribution> {
    if experts.is_empty() {
        return Err(Error::EmptyInput("rbcm experts"));
    }
    if !(prior_var.is_finite() && prior_var > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "prior variance must be positive, got {prior_var}"
        )));
    }
    let q = experts[0].mean.len();
    for e in experts {
        if e.mean.len() != q || e.variance.len() != q {
            return Err(Error::ShapeMismatch {
                context: "rbcm expert lengths",
                expected: q,
                got: e.mean.len().min(e.variance.len()),
            });
        }
        if e.variance.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "expert {} has a non-positive variance",
                e.worker_id
            )));
        }
    }

    let ln_prior = prior_var.ln();
    let prior_precision = 1.0 / prior_var;
    let mut mean = Vec::with_capacity(q);
    let mut variance = Vec::with_capacity(q);
    for j in 0..q {
        let mut beta_sum = 0.0;
        let mut precision = 0.0;
        let mut weighted_mean = 0.0;
        for e in experts {
            let var_k = e.variance[j];
            let beta = 0.5 * (ln_prior - var_k.ln());
            beta_sum += beta;
            precision += beta / var_k;
            weighted_mean += beta * e.mean[j] / var_k;
        }
        precision += (1.0 - beta_sum) * prior_precision;
        precision = precision.max(1e-6 * prior_precision);
        let var = 1.0 / precision;
        variance.push(var);
        mean.push(var * weighted_mean);
    }
    Ok(PredictiveDistribution { mean, variance })
}

fn fit_expert(
    shard: &Shard,
    spec: &KernelSpec,
    theta: &HyperParams,
    query_times: &[f64],
) -> Result<ExpertPrediction> {
    let model = gp::fit(&shard.data, spec, theta).map_err(|e| Error::Worker {
        worker_id: shard.worker_id,
        detail: e.to_string(),
    })?;
    let pred = model.predict(query_times);
    Ok(ExpertPrediction {
        worker_id: shard.worker_id,
        mean: pred.mean,
        variance: pred.variance,
    })
}

/// Predict at `query_times` with the chosen strategy.
///
/// * `Centralized` fits one model on `train` and ignores the shards.
/// * `Sod(k)` fits and predicts on shard `k` alone.
/// * `Rbcm` fits one expert per shard at the shared `theta`, maps all
///   predictions into the full training set's standardized units, fuses
///   them, and rescales. A single expert is returned unchanged (there is
///   nothing to fuse).
pub fn predict_with_strategy(
    strategy: &FusionStrategy,
    spec: &KernelSpec,
    theta: &HyperParams,
    train: &Dataset,
    shards: &[Shard],
    query_times: &[f64],
) -> Result<PredictiveDistribution> {
    match strategy {
        FusionStrategy::Centralized => Ok(gp::fit(train, spec, theta)?.predict(query_times)),
        FusionStrategy::Sod(k) => {
            let shard = shards.get(*k).ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "sod worker_id {k} out of range ({} shards)",
                    shards.len()
                ))
            })?;
            Ok(gp::fit(&shard.data, spec, theta)?.predict(query_times))
        }
        FusionStrategy::Rbcm => {
            if shards.is_empty() {
                return Err(Error::EmptyInput("rbcm shards"));
            }

            #[cfg(feature = "parallel")]
            let experts: Vec<ExpertPrediction> = shards
                .par_iter()
                .map(|s| fit_expert(s, spec, theta, query_times))
                .collect::<Result<Vec<_>>>()?;
            #[cfg(not(feature = "parallel"))]
            let experts: Vec<ExpertPrediction> = shards
                .iter()
                .map(|s| fit_expert(s, spec, theta, query_times))
                .collect::<Result<Vec<_>>>()?;

            if experts.len() == 1 {
                let e = experts.into_iter().next().expect("one expert");
                return Ok(PredictiveDistribution {
                    mean: e.mean,
                    variance: e.variance,
                });
            }

            let stdz = Standardization::from_values(train.values())?;
            let standardized: Vec<ExpertPrediction> = experts
                .into_iter()
                .map(|e| ExpertPrediction {
                    worker_id: e.worker_id,
                    mean: e.mean.iter().map(|&m| stdz.apply(m)).collect(),
                    variance: e
                        .variance
                        .iter()
                        .map(|&v| v / (stdz.std * stdz.std))
                        .collect(),
                })
                .collect();
            let prior = prior_variance(spec, theta)?;
            let fused = rbcm_fuse(&standardized, prior)?;
            Ok(PredictiveDistribution {
                mean: fused.mean.iter().map(|&m| stdz.restore_mean(m)).collect(),
                variance: fused
                    .variance
                    .iter()
                    .map(|&v| stdz.restore_variance(v))
                    .collect(),
            })
        }
    }
}
