use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use super::special::trigamma;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaFit {
    pub shape: f64,
    pub scale: f64,
    /// shape * scale.
    pub mean: f64,
    /// Standard error of `mean` from the observed information.
    pub mean_stderr: f64,
    pub n: usize,
}

const MAX_NEWTON: usize = 100;

/// Maximum-likelihood gamma fit with the location fixed at zero.
///
/// Zeros are replaced by machine epsilon. The shape solves
/// ln k - psi(k) = ln(mean) - mean(ln x) by Newton's method, started from the
/// moment estimate; the scale follows as mean / k.
pub fn gamma_fit(samples: &[f64]) -> Result<GammaFit> {
    let n = samples.len();
    if n < 4 {
        return Err(Error::InvalidInput(format!("gamma fit needs at least 4 samples, got {n}")));
    }
    if samples.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput("gamma samples must be finite and non-negative".into()));
    }
    let x: Vec<f64> = samples.iter().map(|&v| if v == 0.0 { f64::EPSILON } else { v }).collect();
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let s = mean.ln() - x.iter().map(|v| v.ln()).sum::<f64>() / nf;
    if !(var > 0.0) || !(s > 1e-14) {
        return Err(Error::Degenerate("samples are all equal, gamma shape is unbounded".into()));
    }

    // Newton in log k keeps the iterate positive.
    let mut k = mean * mean / var;
    let mut converged = false;
    for _ in 0..MAX_NEWTON {
        let f = k.ln() - digamma(k) - s;
        let df = 1.0 - k * trigamma(k);
        let step = f / df;
        let next = k * (-step).exp();
        if !next.is_finite() || next <= 0.0 {
            break;
        }
        let done = ((next - k) / k).abs() < 1e-13;
        k = next;
        if done {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence("gamma shape Newton iteration".into()));
    }
    let scale = mean / k;
    Ok(GammaFit { shape: k, scale, mean: k * scale, mean_stderr: scale * (k / nf).sqrt(), n })
}
