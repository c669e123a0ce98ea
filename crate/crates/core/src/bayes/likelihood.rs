use statrs::function::gamma::ln_gamma;

use super::rates::DetectorRates;
use crate::error::{invalid, Result};

/// ln C(n, k).
pub(crate) fn ln_choose(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// k ln p with 0^0 = 1.
fn ln_pow(p: f64, k: usize) -> f64 {
    if k == 0 {
        0.0
    } else if p == 0.0 {
        f64::NEG_INFINITY
    } else {
        k as f64 * p.ln()
    }
}

pub(crate) fn log_sum_exp(terms: impl IntoIterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.into_iter().collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// ln P(n_m detections | n_t true TLS) over `bins` linewidth bins.
///
/// Sums over the number j of true TLS that are detected; the remaining
/// n_m - j detections are false positives among the B - n_t empty bins.
pub fn ln_detection_likelihood(n_m: usize, n_t: usize, bins: usize, rates: &DetectorRates) -> Result<f64> {
    if n_t > bins || n_m > bins {
        return Err(invalid(format!("counts n_m={n_m}, n_t={n_t} exceed B={bins}")));
    }
    let (fp, fn_) = (rates.false_pos, rates.false_neg);
    let empty = bins - n_t;
    let lo = n_m.saturating_sub(empty);
    let hi = n_m.min(n_t);
    if lo > hi {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(log_sum_exp((lo..=hi).map(|j| {
        let spurious = n_m - j;
        ln_choose(n_t, j)
            + ln_pow(1.0 - fn_, j)
            + ln_pow(fn_, n_t - j)
            + ln_choose(empty, spurious)
            + ln_pow(fp, spurious)
            + ln_pow(1.0 - fp, empty - spurious)
    })))
}

/// P(n_m | n_t) for `bins` bins.
pub fn detection_likelihood(n_m: usize, n_t: usize, bins: usize, rates: &DetectorRates) -> Result<f64> {
    Ok(ln_detection_likelihood(n_m, n_t, bins, rates)?.exp())
}

/// Poisson(n | lambda) truncated to [0, bins] and renormalised, in log space.
pub(crate) fn ln_truncated_poisson(lambda: f64, bins: usize) -> Vec<f64> {
    if lambda == 0.0 {
        let mut v = vec![f64::NEG_INFINITY; bins + 1];
        v[0] = 0.0;
        return v;
    }
    let raw: Vec<f64> = (0..=bins)
        .map(|n| n as f64 * lambda.ln() - lambda - ln_gamma(n as f64 + 1.0))
        .collect();
    let norm = log_sum_exp(raw.iter().copied());
    raw.into_iter().map(|v| v - norm).collect()
}

/// ln P(n_m | lambda) with the Poisson prior truncated to [0, B].
pub fn ln_marginal_likelihood(n_m: usize, bins: usize, rates: &DetectorRates, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    if n_m > bins {
        return Err(invalid(format!("n_m={n_m} exceeds B={bins}")));
    }
    let prior = ln_truncated_poisson(lambda, bins);
    let mut terms = Vec::with_capacity(bins + 1);
    for (n_t, lp) in prior.iter().enumerate() {
        if *lp == f64::NEG_INFINITY {
            continue;
        }
        terms.push(lp + ln_detection_likelihood(n_m, n_t, bins, rates)?);
    }
    Ok(log_sum_exp(terms))
}

pub fn marginal_likelihood(n_m: usize, bins: usize, rates: &DetectorRates, lambda: f64) -> Result<f64> {
    Ok(ln_marginal_likelihood(n_m, bins, rates, lambda)?.exp())
}

/// Maximum-likelihood Poisson rate on [0, B] by golden-section search.
pub fn mle_lambda(n_m: usize, bins: usize, rates: &DetectorRates) -> Result<f64> {
    if bins == 0 {
        return Err(invalid("need at least one bin"));
    }
    let f = |l: f64| ln_marginal_likelihood(n_m, bins, rates, l);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, bins as f64);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while (b - a) > 1e-6 * (0.5 * (a + b)).max(1e-6) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    // The bracket can only approach the ends; check them exactly.
    let best = [(mid, f(mid)?), (0.0, f(0.0)?), (bins as f64, f(bins as f64)?)]
        .into_iter()
        .fold((mid, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    Ok(best.0)
}
