use serde::{Deserialize, Serialize};

use super::likelihood::{ln_detection_likelihood, ln_truncated_poisson, log_sum_exp, mle_lambda};
use super::rates::DetectorRates;
use crate::error::{invalid, Error, Result};

/// Central credibility mass of reported intervals.
pub const CREDIBLE_MASS: f64 = 0.6827;

/// Detections observed on one resonator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceInput {
    /// Number of detections N_m.
    pub n_detected: usize,
    /// Number of linewidth-sized bins B in the sweep.
    pub n_bins: usize,
    pub rates: DetectorRates,
}

impl InferenceInput {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins == 0 {
            return Err(invalid("B must be at least 1"));
        }
        if self.n_detected > self.n_bins {
            return Err(invalid(format!("N_m={} exceeds B={}", self.n_detected, self.n_bins)));
        }
        for v in [self.rates.false_pos, self.rates.false_neg] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("per-bin rate {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Latent bounds on missed TLS (N_n <= N_T) and spurious detections
    /// (N_p <= B - N_T) for a given true count.
    pub fn latent_bounds(&self, n_t: usize) -> (usize, usize) {
        (n_t, self.n_bins.saturating_sub(n_t))
    }
}

/// Empirical-Bayes posterior over the true TLS count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDensity {
    /// P(N_T = k | N_m) for k = 0..=B.
    pub pmf: Vec<f64>,
    pub lambda_star: f64,
    pub mean_count: f64,
    /// Central 68.27% interval of the interpolated density (counts).
    pub ci68: (f64, f64),
}

/// Posterior over N_T given N_m, with the Poisson prior at its ML rate.
pub fn posterior(input: &InferenceInput) -> Result<PosteriorDensity> {
    input.validate()?;
    let lambda_star = mle_lambda(input.n_detected, input.n_bins, &input.rates)?;
    let prior = ln_truncated_poisson(lambda_star, input.n_bins);
    let mut log_post = Vec::with_capacity(input.n_bins + 1);
    for (n_t, lp) in prior.iter().enumerate() {
        log_post.push(lp + ln_detection_likelihood(input.n_detected, n_t, input.n_bins, &input.rates)?);
    }
    let norm = log_sum_exp(log_post.iter().copied());
    if !norm.is_finite() {
        return Err(Error::Calibration(
            "posterior mass vanishes everywhere; detector rates are inconsistent with the count".into(),
        ));
    }
    let pmf: Vec<f64> = log_post.iter().map(|v| (v - norm).exp()).collect();
    let mean_count = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    let ci68 = central_interval(&pmf, CREDIBLE_MASS);
    Ok(PosteriorDensity { pmf, lambda_star, mean_count, ci68 })
}

/// Equal-tailed interval holding `mass` of the piecewise-linear density through
/// the pmf, taken over the support. When only one point reaches 1e-12 of the
/// peak, a numerically vanishing rate, the interval is that point.
pub fn central_interval(pmf: &[f64], mass: f64) -> (f64, f64) {
    let floor = 1e-12 * pmf.iter().copied().fold(0.0, f64::max);
    if pmf.iter().filter(|&&p| p > floor).count() <= 1 {
        let k = pmf.iter().position(|&p| p > floor).unwrap_or(0);
        return (k as f64, k as f64);
    }
    let first = pmf.iter().position(|&p| p > 0.0).unwrap_or(0);
    let last = pmf.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    let tail = 0.5 * (1.0 - mass);
    (quantile(pmf, first, last, tail), quantile(pmf, first, last, 1.0 - tail))
}

/// Quantile of the linear interpolant of `pmf` on [first, last].
fn quantile(pmf: &[f64], first: usize, last: usize, q: f64) -> f64 {
    let areas: Vec<f64> = (first..last).map(|k| 0.5 * (pmf[k] + pmf[k + 1])).collect();
    let total: f64 = areas.iter().sum();
    let target = q * total;
    let mut acc = 0.0;
    for (i, area) in areas.iter().enumerate() {
        if acc + area >= target {
            let k = first + i;
            let (a, b) = (pmf[k], pmf[k + 1]);
            let need = target - acc;
            // Area under a + (b - a) t over [0, t] is a t + (b - a) t^2 / 2.
            let slope = b - a;
            let t = if slope.abs() < 1e-300 {
                if a > 0.0 { need / a } else { 0.0 }
            } else {
                let disc = (a * a + 2.0 * slope * need).max(0.0);
                (disc.sqrt() - a) / slope
            };
            return k as f64 + t.clamp(0.0, 1.0);
        }
        acc += area;
    }
    last as f64
}
