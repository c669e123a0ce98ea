use num_complex::Complex64;

use super::trace::Trace;
use crate::error::{Error, Result};
use crate::physics::ResonatorParams;

/// Var(data - model) / Mean(|data|) over complex samples.
///
/// The variance of complex deviations is the sum of the per-quadrature
/// (population) variances.
pub fn residual_metric(trace: &Trace, params: &ResonatorParams) -> Result<f64> {
    if params.as_array().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite fit parameters".into()));
    }
    let model: Vec<Complex64> = trace.freqs.iter().map(|&f| params.response(f)).collect();
    residual_metric_of(&trace.s21, &model)
}

/// Residual metric of `data` against precomputed `model` samples.
pub fn residual_metric_of(data: &[Complex64], model: &[Complex64]) -> Result<f64> {
    if data.len() != model.len() {
        return Err(Error::InvalidInput(format!(
            "data has {} samples, model {}",
            data.len(),
            model.len()
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidInput("empty data".into()));
    }
    let n = data.len() as f64;
    let mean_mag = data.iter().map(|z| z.norm()).sum::<f64>() / n;
    if !(mean_mag > f64::MIN_POSITIVE) {
        return Err(Error::DivisionGuard("mean |S21| of data is zero".into()));
    }
    let mean_dev = data.iter().zip(model).map(|(d, m)| d - m).sum::<Complex64>() / n;
    let var = data
        .iter()
        .zip(model)
        .map(|(d, m)| (d - m - mean_dev).norm_sqr())
        .sum::<f64>()
        / n;
    Ok(var / mean_mag)
}
