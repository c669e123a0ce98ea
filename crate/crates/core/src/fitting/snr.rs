use num_complex::Complex64;

use super::background::background_split;
use super::hanger_fit::fit_hanger;
use super::trace::Trace;
use crate::error::Result;

/// Reported SNR of a trace with no measurable noise.
pub const SNR_CAP: f64 = 1e12;
/// Above this the noise estimate is floating-point residue, not noise.
const NOISELESS_SNR: f64 = 1e6;

/// Magnitude depth of the resonance dip over the background noise level.
///
/// The background filter locates the resonance and seeds a hanger fit. The
/// depth is the largest drop of |model| below the fitted background
/// amplitude; the noise is the per-quadrature standard deviation of the fit
/// residuals over background samples.
pub fn estimate_snr(trace: &Trace) -> Result<f64> {
    let split = background_split(trace)?;
    let fit = fit_hanger(trace, None)?;
    let p = fit.params;
    let depth = trace
        .freqs
        .iter()
        .map(|&f| p.background(f).norm() - p.response(f).norm())
        .fold(0.0, f64::max);

    let dev: Vec<Complex64> = split
        .background_indices()
        .map(|k| trace.s21[k] - p.response(trace.freqs[k]))
        .collect();
    let noise = if dev.len() >= 2 {
        let n = dev.len() as f64;
        let mean = dev.iter().sum::<Complex64>() / n;
        (dev.iter().map(|d| (d - mean).norm_sqr()).sum::<f64>() / (2.0 * (n - 1.0))).sqrt()
    } else {
        0.0
    };
    if noise <= 0.0 || depth / noise > NOISELESS_SNR {
        Ok(SNR_CAP)
    } else {
        Ok(depth / noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::fitting::trace::linear_grid;
    use crate::physics::{synth_trace, ResonatorParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> ResonatorParams {
        // Depth 1 - Q_l/|Q_e| = 0.5 on resonance.
        ResonatorParams::new(7.0, 2000.0, 4000.0, 0.0)
    }

    fn snr(sigma: f64, seed: u64) -> f64 {
        let p = params();
        let grid = linear_grid(p.f_r, 12.0 * p.kappa(), 201);
        let t = synth_trace(&p, &[], &grid, sigma, 0.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        estimate_snr(&t).unwrap()
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    #[test]
    fn noiseless_is_capped() {
        assert_eq!(snr(0.0, 0), SNR_CAP);
    }

    #[test]
    fn matches_constructed_ratio() {
        let m = median((0..25).map(|s| snr(0.01, s)).collect());
        assert!((m - 50.0).abs() < 0.15 * 50.0, "{m}");
    }

    #[test]
    fn doubling_noise_halves_snr() {
        let a = median((0..100).map(|s| snr(0.01, s)).collect());
        let b = median((0..100).map(|s| snr(0.02, 1000 + s)).collect());
        let ratio = b / a;
        assert!((ratio - 0.5).abs() < 0.2 * 0.5, "{ratio}");
    }

    #[test]
    fn flat_trace_propagates() {
        let mut p = params();
        p.q_ext_mag = 1e15;
        let grid = linear_grid(p.f_r, 12.0 * p.kappa(), 201);
        let t = synth_trace(&p, &[], &grid, 0.0, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(estimate_snr(&t), Err(Error::NoResonance(_))));
    }
}
