//! Exact Gaussian-process regression: negative log marginal likelihood and
//! its gradient, proximal-augmented hyperparameter optimization, fitting,
//! and prediction with uncertainty.
//!
//! Targets are standardized (zero mean, unit variance) before training and
//! predictions are mapped back to original units. All functions are pure and
//! deterministic; a [`FittedGP`] is immutable and safe to share across
//! threads for concurrent prediction.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, GramOptions, HyperParams, KernelSpec, DEFAULT_JITTER};

const LN_2PI: f64 = 1.837877066409345483560659472811; // ln(2*pi)

/// Timestamped observations: the training set D = {(t_i, y_i)}.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::ShapeMismatch {
                context: "dataset times vs values",
                expected: times.len(),
                got: values.len(),
            });
        }
        if times.is_empty() {
            return Err(Error::EmptyInput("dataset"));
        }
        if times.iter().any(|t| !t.is_finite()) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "dataset entries must be finite".into(),
            ));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "dataset times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Target standardization statistics (population standard deviation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::DegenerateData(format!(
                "standardization needs at least 2 points, got {}",
                values.len()
            )));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std.is_finite() && std > 0.0) {
            return Err(Error::DegenerateData(
                "constant data has zero standard deviation".into(),
            ));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn apply_slice(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.apply(v)).collect()
    }

    pub fn restore_mean(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }

    pub fn restore_variance(&self, v: f64) -> f64 {
        v * self.std * self.std
    }
}

/// Predictive mean and variance in original units. The variance includes the
/// observation-noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Proximal penalty `(rho/2) * ||theta - anchor||^2` added to the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Prox {
    pub rho: f64,
    pub anchor: Vec<f64>,
}

/// Settings for [`minimize`] / [`optimize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    /// Backtracking shrink factor for the line search.
    #[serde(default = "default_backtrack")]
    pub backtrack: f64,
    /// Armijo sufficient-decrease constant.
    #[serde(default = "default_sufficient_decrease")]
    pub sufficient_decrease: f64,
    /// Optional proximal term; set internally by the ADMM local update,
    /// never read from configuration files.
    #[serde(skip)]
    pub prox: Option<Prox>,
}

fn default_max_iters() -> usize {
    200
}
fn default_grad_tol() -> f64 {
    1e-5
}
fn default_backtrack() -> f64 {
    0.5
}
fn default_sufficient_decrease() -> f64 {
    1e-4
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            max_iters: default_max_iters(),
            grad_tol: default_grad_tol(),
            backtrack: default_backtrack(),
            sufficient_decrease: default_sufficient_decrease(),
            prox: None,
        }
    }
}

impl OptimConfig {
    pub fn with_prox(mut self, prox: Prox) -> Self {
        self.prox = Some(prox);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            return Err(Error::InvalidConfig("grad_tol must be positive".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidConfig("backtrack must be in (0,1)".into()));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(Error::InvalidConfig(
                "sufficient_decrease must be in (0,1)".into(),
            ));
        }
        if let Some(p) = &self.prox {
            if !(p.rho > 0.0 && p.rho.is_finite()) {
                return Err(Error::InvalidConfig("prox rho must be positive".into()));
            }
        }
        Ok(())
    }
}

/// A smooth objective with analytic gradient, minimized by [`minimize`].
///
/// The ADMM executor and the cluster worker both consume this trait, so test
/// seams (quadratic objectives) plug into the exact code paths used by the
/// GP training loop.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn value_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn value(&self, theta: &[f64]) -> Result<f64> {
        self.value_grad(theta).map(|(v, _)| v)
    }
}

/// Negative log marginal likelihood of a dataset under a kernel spec, as an
/// [`Objective`] over log-domain hyperparameters. Targets are standardized
/// once at construction.
pub struct NlmlObjective {
    times: Vec<f64>,
    y_std: DVector<f64>,
    spec: KernelSpec,
    standardization: Standardization,
}

impl NlmlObjective {
    pub fn new(data: &Dataset, spec: &KernelSpec) -> Result<Self> {
        spec.validate()?;
        let standardization = Standardization::from_values(data.values())?;
        let y_std = DVector::from_vec(standardization.apply_slice(data.values()));
        Ok(Self {
            times: data.times().to_vec(),
            y_std,
            spec: spec.clone(),
            standardization,
        })
    }

    /// Test seam: build directly from already-standardized targets.
    #[doc(hidden)]
    pub fn from_standardized(times: Vec<f64>, y_std: Vec<f64>, spec: KernelSpec) -> Self {
        Self {
            times,
            y_std: DVector::from_vec(y_std),
            spec,
            standardization: Standardization { mean: 0.0, std: 1.0 },
        }
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    fn factorize(&self, theta: &HyperParams) -> Result<Cholesky<f64, Dyn>> {
        chol_with_escalation(&self.spec, theta, &self.times)
    }

    fn theta(&self, raw: &[f64]) -> Result<HyperParams> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "hyperparameters must be finite".into(),
            ));
        }
        HyperParams::from_raw(&self.spec, raw.to_vec())
    }
}

impl Objective for NlmlObjective {
    fn dim(&self) -> usize {
        self.spec.theta_dim()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        let theta = self.theta(theta)?;
        let chol = self.factorize(&theta)?;
        let alpha = chol.solve(&self.y_std);
        Ok(nlml_from_parts(&self.y_std, &alpha, &chol))
    }

    fn value_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let theta = self.theta(theta)?;
        let chol = self.factorize(&theta)?;
        let alpha = chol.solve(&self.y_std);
        let value = nlml_from_parts(&self.y_std, &alpha, &chol);

        // d NLML / d theta_j = 0.5 * sum_ij (Kinv - alpha alpha^T)_ij (dK_j)_ij.
        let mut b = chol.inverse();
        let n = b.nrows();
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] -= alpha[i] * alpha[j];
            }
        }
        let mut grad = Vec::with_capacity(theta.dim());
        for j in 0..theta.dim() {
            let dk = kernel::gram_grad(&self.spec, &theta, &self.times, j)?;
            grad.push(0.5 * b.iter().zip(dk.iter()).map(|(x, y)| x * y).sum::<f64>());
        }
        Ok((value, grad))
    }
}

fn nlml_from_parts(y: &DVector<f64>, alpha: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let n = y.len() as f64;
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    0.5 * y.dot(alpha) + log_det_half + 0.5 * n * LN_2PI
}

/// Cholesky with one bounded recovery: on failure retry with jitter * 100.
fn chol_with_escalation(
    spec: &KernelSpec,
    theta: &HyperParams,
    times: &[f64],
) -> Result<Cholesky<f64, Dyn>> {
    for jitter in [DEFAULT_JITTER, DEFAULT_JITTER * 100.0] {
        let opts = GramOptions {
            jitter,
            include_noise: true,
        };
        let ky = kernel::gram(spec, theta, times, &opts)?;
        if let Some(chol) = ky.cholesky() {
            return Ok(chol);
        }
    }
    Err(Error::IllConditionedKernel)
}

/// Negative log marginal likelihood of `data` under `spec` at `theta`.
pub fn nlml(data: &Dataset, spec: &KernelSpec, theta: &HyperParams) -> Result<f64> {
    NlmlObjective::new(data, spec)?.value(theta.raw())
}

/// Gradient of [`nlml`] w.r.t. the log-domain hyperparameters.
pub fn nlml_grad(data: &Dataset, spec: &KernelSpec, theta: &HyperParams) -> Result<Vec<f64>> {
    Ok(NlmlObjective::new(data, spec)?
        .value_grad(theta.raw())?
        .1)
}

/// Outcome of [`minimize`].
#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub theta: Vec<f64>,
    /// Final objective value (including the prox term when configured).
    pub value: f64,
    /// Objective value at the start point and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// Whether the gradient norm dropped below `grad_tol`.
    pub converged: bool,
}

const MAX_BACKTRACKS: usize = 60;
const LBFGS_MEMORY: usize = 8;
const MAX_MOVE: f64 = 1.0;
const STALL_REL_DECREASE: f64 = 1e-12;
const STALL_PATIENCE: usize = 2;

/// Descent with a backtracking (Armijo) line search. Monotone: accepted
/// steps never increase the objective. Candidate evaluations that fail
/// (e.g. an ill-conditioned Gram matrix) are treated as rejected steps.
///
/// Search directions are preconditioned with an L-BFGS memory of recent
/// curvature pairs; when no valid pair exists this reduces to steepest
/// descent. The stopping rule (`grad_tol` on the gradient inf-norm or
/// `max_iters`) and the line-search constants come from `cfg`.
pub fn minimize(
    objective: &dyn Objective,
    theta0: &[f64],
    cfg: &OptimConfig,
) -> Result<MinimizeResult> {
    cfg.validate()?;
    if theta0.len() != objective.dim() {
        return Err(Error::ShapeMismatch {
            context: "minimize start point",
            expected: objective.dim(),
            got: theta0.len(),
        });
    }
    if let Some(p) = &cfg.prox {
        if p.anchor.len() != theta0.len() {
            return Err(Error::ShapeMismatch {
                context: "prox anchor",
                expected: theta0.len(),
                got: p.anchor.len(),
            });
        }
    }

    let augment = |theta: &[f64], value: f64| -> f64 {
        match &cfg.prox {
            Some(p) => {
                let sq: f64 = theta
                    .iter()
                    .zip(&p.anchor)
                    .map(|(t, a)| (t - a) * (t - a))
                    .sum();
                value + 0.5 * p.rho * sq
            }
            None => value,
        }
    };
    let augment_grad = |theta: &[f64], grad: &mut [f64]| {
        if let Some(p) = &cfg.prox {
            for ((g, t), a) in grad.iter_mut().zip(theta).zip(&p.anchor) {
                *g += p.rho * (t - a);
            }
        }
    };

    let mut theta = theta0.to_vec();
    let (v0, mut grad) = objective.value_grad(&theta)?;
    let mut value = augment(&theta, v0);
    if !value.is_finite() {
        return Err(Error::InvalidStart);
    }
    augment_grad(&theta, &mut grad);

    let mut trace = vec![value];
    let mut pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>)> = Default::default();
    let mut iterations = 0;
    let mut converged = false;
    let mut stalled_iters = 0usize;

    for _ in 0..cfg.max_iters {
        let grad_inf = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_inf <= cfg.grad_tol {
            converged = true;
            break;
        }

        let mut direction = lbfgs_direction(&grad, &pairs);
        let mut slope: f64 = direction.iter().zip(&grad).map(|(d, g)| d * g).sum();
        let is_descent = slope.is_finite() && slope < 0.0;
        if !is_descent {
            // Degenerate memory; fall back to steepest descent.
            direction = grad.iter().map(|g| -g).collect();
            slope = -grad.iter().map(|g| g * g).sum::<f64>();
        }

        // Cap the displacement per iteration (log-domain parameters): keeps
        // early steps from hopping across NLML basins.
        let dir_inf = direction.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let mut alpha = if dir_inf > MAX_MOVE { MAX_MOVE / dir_inf } else { 1.0 };
        let mut accepted: Option<(Vec<f64>, f64)> = None;
        for _ in 0..MAX_BACKTRACKS {
            let candidate: Vec<f64> = theta
                .iter()
                .zip(&direction)
                .map(|(t, d)| t + alpha * d)
                .collect();
            // A failed evaluation (e.g. ill-conditioned Gram) rejects the
            // step, like any candidate without sufficient decrease.
            if let Ok(v) = objective.value(&candidate) {
                let va = augment(&candidate, v);
                if va.is_finite() && va <= value + cfg.sufficient_decrease * alpha * slope {
                    accepted = Some((candidate, va));
                    break;
                }
            }
            alpha *= cfg.backtrack;
        }
        let Some((next, next_value)) = accepted else {
            break; // line search stalled; no descent at fp precision
        };

        let (_, mut next_grad) = objective.value_grad(&next)?;
        augment_grad(&next, &mut next_grad);

        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-10 * s_norm * y_norm {
            if pairs.len() == LBFGS_MEMORY {
                pairs.pop_front();
            }
            pairs.push_back((s, y));
        }

        let decrease = value - next_value;
        theta = next;
        value = next_value;
        grad = next_grad;
        trace.push(value);
        iterations += 1;

        // Progress below fp resolution of the objective: further line
        // searches only burn evaluations.
        if decrease <= STALL_REL_DECREASE * (1.0 + value.abs()) {
            stalled_iters += 1;
            if stalled_iters >= STALL_PATIENCE {
                break;
            }
        } else {
            stalled_iters = 0;
        }
    }

    Ok(MinimizeResult {
        theta,
        value,
        trace,
        iterations,
        converged,
    })
}

/// Two-loop recursion: returns `-H g` for the implicit L-BFGS inverse
/// Hessian approximation built from `pairs`.
fn lbfgs_direction(
    grad: &[f64],
    pairs: &std::collections::VecDeque<(Vec<f64>, Vec<f64>)>,
) -> Vec<f64> {
    let mut q: Vec<f64> = grad.to_vec();
    if pairs.is_empty() {
        for v in q.iter_mut() {
            *v = -*v;
        }
        return q;
    }
    let mut alphas = vec![0.0; pairs.len()];
    for (i, (s, y)) in pairs.iter().enumerate().rev() {
        let rho = 1.0 / s.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        let a = rho * s.iter().zip(&q).map(|(si, qi)| si * qi).sum::<f64>();
        alphas[i] = a;
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
    }
    let (s_last, y_last) = pairs.back().expect("non-empty memory");
    let gamma = s_last.iter().zip(y_last).map(|(a, b)| a * b).sum::<f64>()
        / y_last.iter().map(|v| v * v).sum::<f64>();
    for qi in q.iter_mut() {
        *qi *= gamma;
    }
    for (i, (s, y)) in pairs.iter().enumerate() {
        let rho = 1.0 / s.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        let b = rho * y.iter().zip(&q).map(|(yi, qi)| yi * qi).sum::<f64>();
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (alphas[i] - b) * si;
        }
    }
    for v in q.iter_mut() {
        *v = -*v;
    }
    q
}

/// Minimize the (optionally prox-augmented) NLML starting from `theta0`.
pub fn optimize(
    data: &Dataset,
    spec: &KernelSpec,
    theta0: &HyperParams,
    cfg: &OptimConfig,
) -> Result<HyperParams> {
    let objective = NlmlObjective::new(data, spec)?;
    let result = minimize(&objective, theta0.raw(), cfg)?;
    HyperParams::from_raw(spec, result.theta)
}

/// Trained GP state: Cholesky factor, weight vector, and standardization.
#[derive(Debug, Clone)]
pub struct FittedGP {
    spec: KernelSpec,
    theta: HyperParams,
    times: Vec<f64>,
    chol_l: DMatrix<f64>,
    alpha: DVector<f64>,
    standardization: Standardization,
}

/// Precompute the Cholesky factor and weight vector for prediction.
pub fn fit(data: &Dataset, spec: &KernelSpec, theta: &HyperParams) -> Result<FittedGP> {
    spec.validate()?;
    if theta.dim() != spec.theta_dim() {
        return Err(Error::ShapeMismatch {
            context: "fit hyperparameters",
            expected: spec.theta_dim(),
            got: theta.dim(),
        });
    }
    let standardization = Standardization::from_values(data.values())?;
    let y_std = DVector::from_vec(standardization.apply_slice(data.values()));
    let chol = chol_with_escalation(spec, theta, data.times())?;
    let alpha = chol.solve(&y_std);
    Ok(FittedGP {
        spec: spec.clone(),
        theta: theta.clone(),
        times: data.times().to_vec(),
        chol_l: chol.unpack(),
        alpha,
        standardization,
    })
}

impl FittedGP {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn theta(&self) -> &HyperParams {
        &self.theta
    }

    pub fn train_times(&self) -> &[f64] {
        &self.times
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    #[cfg(test)]
    pub(crate) fn chol_l(&self) -> &DMatrix<f64> {
        &self.chol_l
    }

    #[cfg(test)]
    pub(crate) fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Predictive mean and variance at `query_times`, in original units.
    /// The variance includes the observation-noise variance. An empty query
    /// yields an empty result.
    pub fn predict(&self, query_times: &[f64]) -> PredictiveDistribution {
        let (mean_std, var_std) = self.predict_standardized_raw(query_times);
        PredictiveDistribution {
            mean: mean_std
                .iter()
                .map(|&m| self.standardization.restore_mean(m))
                .collect(),
            variance: var_std
                .iter()
                .map(|&v| self.standardization.restore_variance(v.max(0.0)))
                .collect(),
        }
    }

    /// Standardized-space prediction without the nonnegativity clamp.
    pub(crate) fn predict_standardized_raw(&self, query_times: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let q = query_times.len();
        if q == 0 {
            return (Vec::new(), Vec::new());
        }
        let n = self.times.len();
        let mut kstar = DMatrix::<f64>::zeros(n, q);
        for (j, &tq) in query_times.iter().enumerate() {
            for (i, &ti) in self.times.iter().enumerate() {
                kstar[(i, j)] =
                    kernel::eval_kernel(&self.spec, &self.theta, ti, tq).expect("checked at fit");
            }
        }
        let mean: Vec<f64> = (0..q).map(|j| kstar.column(j).dot(&self.alpha)).collect();

        let v = self
            .chol_l
            .solve_lower_triangular(&kstar)
            .expect("lower-triangular solve with positive diagonal");
        let prior_at_zero: f64 = (0..self.spec.terms.len())
            .map(|i| (2.0 * self.theta.log_amplitude(i)).exp())
            .sum();
        let noise_var = self.theta.noise_variance();
        let variance: Vec<f64> = (0..q)
            .map(|j| prior_at_zero - v.column(j).norm_squared() + noise_var)
            .collect();
        (mean, variance)
    }
}
