//! Synthetic wireless-traffic generation with known weekly/daily structure,
//! CSV ingestion/export, chronological train/test splitting, and the MAPE
//! and RMSE metrics.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::Dataset;

const CSV_HEADER: &str = "time_h,value";

/// Parameters of the synthetic traffic generator:
/// `y(t) = offset + weekly_amp sin(2 pi t / 168) + daily_amp sin(2 pi t / 24)
///  + smooth SE-kernel draw + white noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    #[serde(default = "default_n_points")]
    pub n_points: usize,
    #[serde(default = "default_dt_hours")]
    pub dt_hours: f64,
    /// Keeps values positive so MAPE stays well defined.
    #[serde(default = "default_offset")]
    pub offset: f64,
    #[serde(default = "default_weekly_amp")]
    pub weekly_amp: f64,
    #[serde(default = "default_daily_amp")]
    pub daily_amp: f64,
    #[serde(default = "default_smooth_noise_sigma")]
    pub smooth_noise_sigma: f64,
    #[serde(default = "default_smooth_noise_lengthscale_hours")]
    pub smooth_noise_lengthscale_hours: f64,
    #[serde(default = "default_white_noise_sigma")]
    pub white_noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_points() -> usize {
    700
}
fn default_dt_hours() -> f64 {
    1.0
}
fn default_offset() -> f64 {
    10.0
}
fn default_weekly_amp() -> f64 {
    3.0
}
fn default_daily_amp() -> f64 {
    2.0
}
fn default_smooth_noise_sigma() -> f64 {
    0.5
}
fn default_smooth_noise_lengthscale_hours() -> f64 {
    6.0
}
fn default_white_noise_sigma() -> f64 {
    0.2
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            n_points: default_n_points(),
            dt_hours: default_dt_hours(),
            offset: default_offset(),
            weekly_amp: default_weekly_amp(),
            daily_amp: default_daily_amp(),
            smooth_noise_sigma: default_smooth_noise_sigma(),
            smooth_noise_lengthscale_hours: default_smooth_noise_lengthscale_hours(),
            white_noise_sigma: default_white_noise_sigma(),
            seed: 0,
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 2 {
            return Err(Error::InvalidConfig("n_points must be >= 2".into()));
        }
        if !(self.dt_hours > 0.0 && self.dt_hours.is_finite()) {
            return Err(Error::InvalidConfig("dt_hours must be positive".into()));
        }
        if !(self.offset > 0.0 && self.offset.is_finite()) {
            return Err(Error::InvalidConfig("offset must be positive".into()));
        }
        for (name, v) in [
            ("weekly_amp", self.weekly_amp),
            ("daily_amp", self.daily_amp),
            ("smooth_noise_sigma", self.smooth_noise_sigma),
            ("white_noise_sigma", self.white_noise_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if !(self.smooth_noise_lengthscale_hours > 0.0
            && self.smooth_noise_lengthscale_hours.is_finite())
        {
            return Err(Error::InvalidConfig(
                "smooth_noise_lengthscale_hours must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Chronological prefix/suffix split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_train_fraction() -> f64 {
    600.0 / 700.0
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: default_train_fraction(),
        }
    }
}

/// Deterministic synthetic traffic series for `cfg.seed`.
///
/// The smooth component is a zero-mean multivariate normal draw under an SE
/// kernel (via Cholesky of its jittered Gram). Components with zero sigma are
/// skipped entirely so that disabling all noise yields the deterministic
/// sinusoidal series exactly.
pub fn generate_traffic(cfg: &TrafficConfig) -> Result<Dataset> {
    cfg.validate()?;
    let n = cfg.n_points;
    let times: Vec<f64> = (0..n).map(|i| i as f64 * cfg.dt_hours).collect();

    // Reduce phases before sin so the series is exactly periodic whenever the
    // time step divides the period.
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut values: Vec<f64> = times
        .iter()
        .map(|&t| {
            cfg.offset
                + cfg.weekly_amp * (two_pi * (t.rem_euclid(168.0) / 168.0)).sin()
                + cfg.daily_amp * (two_pi * (t.rem_euclid(24.0) / 24.0)).sin()
        })
        .collect();

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    if cfg.smooth_noise_sigma > 0.0 {
        let draws: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let smooth = smooth_se_draw(
            &times,
            cfg.smooth_noise_sigma,
            cfg.smooth_noise_lengthscale_hours,
            &draws,
        )?;
        for (v, s) in values.iter_mut().zip(smooth.iter()) {
            *v += s;
        }
    }
    if cfg.white_noise_sigma > 0.0 {
        for v in values.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v += cfg.white_noise_sigma * e;
        }
    }

    Dataset::new(times, values)
}

fn smooth_se_draw(times: &[f64], sigma: f64, length_scale: f64, draws: &[f64]) -> Result<Vec<f64>> {
    let n = times.len();
    let sigma2 = sigma * sigma;
    for jitter in [1e-8, 1e-6] {
        let mut k = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let z = (times[i] - times[j]) / length_scale;
                let v = sigma2 * (-0.5 * z * z).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        for i in 0..n {
            k[(i, i)] += jitter;
        }
        if let Some(chol) = k.cholesky() {
            let sample = chol.l() * DVector::from_column_slice(draws);
            return Ok(sample.as_slice().to_vec());
        }
    }
    Err(Error::IllConditionedKernel)
}

/// Write `time_h,value` CSV with 17 significant digits per field, enough to
/// round-trip every finite f64 exactly.
pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{CSV_HEADER}")?;
    for (t, v) in data.times().iter().zip(data.values()) {
        writeln!(w, "{t:.16e},{v:.16e}")?;
    }
    w.flush()?;
    Ok(())
}

/// Load a CSV written by [`save_csv`]. Errors carry the 1-based line number;
/// the header is line 1.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    match lines.next() {
        Some((_, Ok(header))) if header.trim_end() == CSV_HEADER => {}
        Some((_, Ok(other))) => {
            return Err(Error::CsvFormat {
                line: 1,
                msg: format!("expected header '{CSV_HEADER}', got '{}'", other.trim_end()),
            })
        }
        Some((_, Err(e))) => return Err(e.into()),
        None => {
            return Err(Error::CsvFormat {
                line: 1,
                msg: "missing header".into(),
            })
        }
    }

    let mut times: Vec<f64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let row = line.trim_end();
        if row.is_empty() {
            continue;
        }
        let mut fields = row.split(',');
        let (t_str, v_str) = match (fields.next(), fields.next(), fields.next()) {
            (Some(t), Some(v), None) => (t, v),
            _ => {
                return Err(Error::CsvFormat {
                    line: line_no,
                    msg: "expected exactly two comma-separated fields".into(),
                })
            }
        };
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::CsvFormat {
                    line: line_no,
                    msg: format!("non-numeric {what}: '{s}'"),
                })
        };
        let t = parse(t_str, "time")?;
        let v = parse(v_str, "value")?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::CsvFormat {
                    line: line_no,
                    msg: format!("times must be strictly increasing ({t} after {prev})"),
                });
            }
        }
        times.push(t);
        values.push(v);
    }
    if times.is_empty() {
        return Err(Error::CsvFormat {
            line: 2,
            msg: "no data rows".into(),
        });
    }
    Dataset::new(times, values)
}

/// Chronological split: the first `floor(N * fraction)` points train, the
/// rest test. The floor is taken with a 1e-9 guard so that exact rational
/// fractions like 6/7 of 700 land on the intended boundary.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let f = spec.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Split(format!(
            "train_fraction must be in (0,1), got {f}"
        )));
    }
    let n = data.len();
    let scaled = n as f64 * f;
    let mut n_train = scaled.floor() as usize;
    if scaled - n_train as f64 >= 1.0 - 1e-9 {
        n_train += 1;
    }
    if n_train == 0 || n_train >= n {
        return Err(Error::Split(format!(
            "split {n_train}/{} leaves an empty side",
            n - n_train.min(n)
        )));
    }
    let train = Dataset::new(
        data.times()[..n_train].to_vec(),
        data.values()[..n_train].to_vec(),
    )?;
    let test = Dataset::new(
        data.times()[n_train..].to_vec(),
        data.values()[n_train..].to_vec(),
    )?;
    Ok((train, test))
}

/// Mean absolute percentage error, in percent. Requires every actual value
/// to be nonzero.
pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_metric_inputs(actual, predicted)?;
    let mut total = 0.0;
    for (i, (y, p)) in actual.iter().zip(predicted).enumerate() {
        if *y == 0.0 {
            return Err(Error::UndefinedMetric(i));
        }
        total += ((p - y) / y).abs();
    }
    Ok(100.0 * total / actual.len() as f64)
}

/// Root mean squared error.
pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_metric_inputs(actual, predicted)?;
    let sum_sq: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(y, p)| (p - y) * (p - y))
        .sum();
    Ok((sum_sq / actual.len() as f64).sqrt())
}

fn check_metric_inputs(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::ShapeMismatch {
            context: "metric inputs",
            expected: actual.len(),
            got: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::EmptyInput("metric inputs"));
    }
    Ok(())
}
