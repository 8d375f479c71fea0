//! Composite covariance functions over scalar time inputs (hours).
//!
//! A kernel is an ordered sum of squared-exponential and periodic terms plus
//! an observation-noise term that enters only on the Gram diagonal. All
//! hyperparameters live in the log domain so that optimization is
//! unconstrained and the ADMM consensus variable is a plain real vector.
//!
//! Hyperparameter packing order: for each term, (log amplitude,
//! log length-scale); the final entry is the log noise standard deviation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default diagonal jitter added to every Gram matrix.
pub const DEFAULT_JITTER: f64 = 1e-8;

/// One additive term of the composite kernel.
///
/// Periods are fixed design constants (168 h weekly, 24 h daily), not learned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelTerm {
    #[serde(rename = "se")]
    SquaredExponential,
    Periodic { period_hours: f64 },
}

/// Ordered kernel composition. Term order determines hyperparameter packing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub terms: Vec<KernelTerm>,
    /// Observation-noise term on the Gram diagonal. Always present here.
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub noise: bool,
}

fn default_true() -> bool {
    true
}

#[allow(clippy::trivially_copy_pass_by_ref)]
fn is_true(v: &bool) -> bool {
    *v
}

impl KernelSpec {
    pub fn new(terms: Vec<KernelTerm>) -> Result<Self> {
        let spec = Self { terms, noise: true };
        spec.validate()?;
        Ok(spec)
    }

    /// Weekly periodic + daily periodic + squared exponential.
    pub fn weekly_daily_se() -> Self {
        Self {
            terms: vec![
                KernelTerm::Periodic {
                    period_hours: 168.0,
                },
                KernelTerm::Periodic { period_hours: 24.0 },
                KernelTerm::SquaredExponential,
            ],
            noise: true,
        }
    }

    /// A single squared-exponential term (the GP-SE baseline).
    pub fn se_only() -> Self {
        Self {
            terms: vec![KernelTerm::SquaredExponential],
            noise: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::InvalidConfig(
                "kernel needs at least one non-noise term".into(),
            ));
        }
        if !self.noise {
            return Err(Error::InvalidConfig(
                "the observation-noise term is required".into(),
            ));
        }
        for term in &self.terms {
            if let KernelTerm::Periodic { period_hours } = term {
                if !(period_hours.is_finite() && *period_hours > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "periodic term needs period_hours > 0, got {period_hours}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Dimension of the packed hyperparameter vector: 2 per term + noise.
    pub fn theta_dim(&self) -> usize {
        2 * self.terms.len() + 1
    }
}

/// Packed log-domain hyperparameters for a [`KernelSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HyperParams {
    raw: Vec<f64>,
}

impl HyperParams {
    pub fn from_raw(spec: &KernelSpec, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != spec.theta_dim() {
            return Err(Error::ShapeMismatch {
                context: "hyperparameter vector",
                expected: spec.theta_dim(),
                got: raw.len(),
            });
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "hyperparameters must be finite".into(),
            ));
        }
        Ok(Self { raw })
    }

    pub(crate) fn from_vec_unchecked(raw: Vec<f64>) -> Self {
        Self { raw }
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn into_raw(self) -> Vec<f64> {
        self.raw
    }

    pub fn dim(&self) -> usize {
        self.raw.len()
    }

    pub fn log_amplitude(&self, term: usize) -> f64 {
        self.raw[2 * term]
    }

    pub fn log_length_scale(&self, term: usize) -> f64 {
        self.raw[2 * term + 1]
    }

    pub fn log_noise_std(&self) -> f64 {
        *self.raw.last().expect("non-empty hyperparameter vector")
    }

    pub fn noise_variance(&self) -> f64 {
        (2.0 * self.log_noise_std()).exp()
    }
}

/// Options for Gram-matrix assembly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramOptions {
    /// Small nonnegative value added to the diagonal for conditioning.
    pub jitter: f64,
    /// Whether to add the observation-noise variance to the diagonal.
    pub include_noise: bool,
}

impl Default for GramOptions {
    fn default() -> Self {
        Self {
            jitter: DEFAULT_JITTER,
            include_noise: true,
        }
    }
}

impl GramOptions {
    fn validate(&self) -> Result<()> {
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "jitter must be nonnegative, got {}",
                self.jitter
            )));
        }
        Ok(())
    }
}

/// A term with its log parameters resolved to evaluation-ready constants.
#[derive(Debug, Clone, Copy)]
struct PreparedTerm {
    kind: KernelTerm,
    amp2: f64,
    length_scale: f64,
}

impl PreparedTerm {
    fn value(&self, r: f64) -> f64 {
        match self.kind {
            KernelTerm::SquaredExponential => {
                let z = r / self.length_scale;
                self.amp2 * (-0.5 * z * z).exp()
            }
            KernelTerm::Periodic { period_hours } => {
                let s = (std::f64::consts::PI * r / period_hours).sin();
                self.amp2 * (-2.0 * s * s / (self.length_scale * self.length_scale)).exp()
            }
        }
    }

    /// d value / d (log length-scale), via the chain rule.
    fn length_scale_grad(&self, r: f64) -> f64 {
        let ls2 = self.length_scale * self.length_scale;
        match self.kind {
            KernelTerm::SquaredExponential => self.value(r) * (r * r) / ls2,
            KernelTerm::Periodic { period_hours } => {
                let s = (std::f64::consts::PI * r / period_hours).sin();
                self.value(r) * 4.0 * s * s / ls2
            }
        }
    }
}

fn prepare(spec: &KernelSpec, theta: &HyperParams) -> Result<Vec<PreparedTerm>> {
    check_theta(spec, theta)?;
    Ok(spec
        .terms
        .iter()
        .enumerate()
        .map(|(i, &kind)| PreparedTerm {
            kind,
            amp2: (2.0 * theta.log_amplitude(i)).exp(),
            length_scale: theta.log_length_scale(i).exp(),
        })
        .collect())
}

fn check_theta(spec: &KernelSpec, theta: &HyperParams) -> Result<()> {
    if theta.dim() != spec.theta_dim() {
        return Err(Error::ShapeMismatch {
            context: "hyperparameter vector",
            expected: spec.theta_dim(),
            got: theta.dim(),
        });
    }
    Ok(())
}

/// Pointwise kernel evaluation: the sum over non-noise terms at lag |t1 - t2|.
///
/// The noise term is excluded; it enters only on the Gram diagonal.
pub fn eval_kernel(spec: &KernelSpec, theta: &HyperParams, t1: f64, t2: f64) -> Result<f64> {
    let prepared = prepare(spec, theta)?;
    Ok(eval_prepared(&prepared, t1, t2))
}

fn eval_prepared(prepared: &[PreparedTerm], t1: f64, t2: f64) -> f64 {
    let r = (t1 - t2).abs();
    prepared.iter().map(|term| term.value(r)).sum()
}

/// Gram matrix over `times`, exactly symmetric by construction: the upper
/// triangle is computed and mirrored. The diagonal additionally gains the
/// noise variance (when `include_noise`) and the jitter.
pub fn gram(
    spec: &KernelSpec,
    theta: &HyperParams,
    times: &[f64],
    opts: &GramOptions,
) -> Result<DMatrix<f64>> {
    opts.validate()?;
    if times.is_empty() {
        return Err(Error::EmptyInput("gram: times"));
    }
    let prepared = prepare(spec, theta)?;
    let n = times.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = eval_prepared(&prepared, times[i], times[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let diag_extra = if opts.include_noise {
        theta.noise_variance() + opts.jitter
    } else {
        opts.jitter
    };
    for i in 0..n {
        m[(i, i)] += diag_extra;
    }
    Ok(m)
}

/// Derivative of the full noisy Gram matrix w.r.t. the log-domain
/// hyperparameter with index `j`. Jitter is constant and does not appear.
pub fn gram_grad(
    spec: &KernelSpec,
    theta: &HyperParams,
    times: &[f64],
    j: usize,
) -> Result<DMatrix<f64>> {
    if times.is_empty() {
        return Err(Error::EmptyInput("gram_grad: times"));
    }
    let prepared = prepare(spec, theta)?;
    if j >= theta.dim() {
        return Err(Error::ShapeMismatch {
            context: "hyperparameter index",
            expected: theta.dim(),
            got: j,
        });
    }
    let n = times.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    if j == 2 * spec.terms.len() {
        // Noise: d(sigma_n^2)/d(log sigma_n) = 2 sigma_n^2 on the diagonal.
        let d = 2.0 * theta.noise_variance();
        for i in 0..n {
            m[(i, i)] = d;
        }
        return Ok(m);
    }
    let term = &prepared[j / 2];
    let is_amplitude = j.is_multiple_of(2);
    for i in 0..n {
        for k in i..n {
            let r = (times[i] - times[k]).abs();
            let v = if is_amplitude {
                2.0 * term.value(r)
            } else {
                term.length_scale_grad(r)
            };
            m[(i, k)] = v;
            m[(k, i)] = v;
        }
    }
    Ok(m)
}

/// Default starting point: unit amplitudes, a one-day SE length-scale,
/// unit periodic length-scales, and noise std 0.1. Near unit scale on
/// standardized data.
pub fn default_theta(spec: &KernelSpec) -> HyperParams {
    let mut raw = Vec::with_capacity(spec.theta_dim());
    for term in &spec.terms {
        raw.push(0.0);
        raw.push(match term {
            KernelTerm::SquaredExponential => 24.0f64.ln(),
            KernelTerm::Periodic { .. } => 0.0,
        });
    }
    raw.push(0.1f64.ln());
    HyperParams::from_vec_unchecked(raw)
}
