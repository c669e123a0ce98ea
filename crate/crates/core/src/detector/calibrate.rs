use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::sweep::SweepDataset;
use crate::error::{Error, Result};
use crate::fitting::{fit_hanger, linear_grid, residual_metric_of, FitResult, Trace};
use crate::physics::{synth_trace, ResonatorParams, TlsDefect};

/// Temperature of the critical defect used to build the threshold (K).
pub const CALIBRATION_TLS_TEMPERATURE: f64 = 0.01;
/// Smallest ensemble accepted by [`build_threshold`].
pub const MIN_THRESHOLD_ENSEMBLE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseCalibrationOptions {
    /// Synthetic traces per trial sigma.
    pub ensemble_size: usize,
    /// Relative agreement of median residual metrics that ends the search.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for NoiseCalibrationOptions {
    fn default() -> Self {
        Self { ensemble_size: 32, tolerance: 0.01, max_iterations: 100, seed: 0 }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fitted synthetic copies of the baselines with fixed unit normal draws.
struct SyntheticEnsemble<'a> {
    baselines: &'a [(&'a Trace, &'a FitResult)],
    models: Vec<Vec<Complex64>>,
    draws: Vec<Vec<Complex64>>,
}

impl<'a> SyntheticEnsemble<'a> {
    fn new(baselines: &'a [(&'a Trace, &'a FitResult)], size: usize, seed: u64) -> Self {
        let models = baselines
            .iter()
            .map(|(t, f)| t.freqs.iter().map(|&x| f.params.response(x)).collect())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws = (0..size)
            .map(|j| {
                let n = baselines[j % baselines.len()].0.len();
                (0..n)
                    .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                    .collect()
            })
            .collect();
        Self { baselines, models, draws }
    }

    /// Median residual metric of the ensemble at noise `sigma`; NaN if every fit fails.
    fn median_metric(&self, sigma: f64) -> f64 {
        let nb = self.baselines.len();
        let mut metrics: Vec<f64> = self
            .draws
            .iter()
            .enumerate()
            .map(|(j, z)| {
                let (trace, fit) = self.baselines[j % nb];
                let model = &self.models[j % nb];
                let s21: Vec<Complex64> = model.iter().zip(z).map(|(m, e)| m + sigma * e).collect();
                let t = Trace { freqs: trace.freqs.clone(), s21, bias_current: trace.bias_current };
                match fit_hanger(&t, Some(&fit.params)) {
                    Ok(r) => r.residual_metric,
                    Err(_) => residual_metric_of(&t.s21, model).unwrap_or(f64::NAN),
                }
            })
            .filter(|m| m.is_finite())
            .collect();
        if metrics.is_empty() {
            f64::NAN
        } else {
            median(&mut metrics)
        }
    }
}

/// Per-quadrature noise that makes synthetic traces fit as badly as the
/// baseline. See [`calibrate_noise_multi`].
pub fn calibrate_noise(baseline: &Trace, fit: &FitResult, opts: &NoiseCalibrationOptions) -> Result<f64> {
    calibrate_noise_multi(&[(baseline, fit)], opts)
}

/// Bisection on sigma until the median residual metric of fitted synthetic
/// traces matches the median over the baselines within `opts.tolerance`.
///
/// Synthetic trace `j` reuses the parameters and grid of baseline
/// `j mod len` and the same normal draws at every trial sigma, so the
/// synthetic median moves smoothly with sigma.
pub fn calibrate_noise_multi(baselines: &[(&Trace, &FitResult)], opts: &NoiseCalibrationOptions) -> Result<f64> {
    if baselines.is_empty() {
        return Err(Error::InvalidInput("no baseline traces".into()));
    }
    if opts.ensemble_size == 0 || !(opts.tolerance > 0.0) {
        return Err(Error::InvalidInput("ensemble size and tolerance must be positive".into()));
    }
    let mut measured: Vec<f64> = baselines.iter().map(|(_, f)| f.residual_metric).collect();
    if measured.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidInput("baseline fit has no residual metric".into()));
    }
    let measured = median(&mut measured);
    let scale = baselines
        .iter()
        .map(|(t, _)| t.s21.iter().map(|z| z.norm()).sum::<f64>() / t.len() as f64)
        .sum::<f64>()
        / baselines.len() as f64;
    if measured <= 1e-20 * scale {
        return Ok(0.0);
    }

    let ensemble = SyntheticEnsemble::new(baselines, opts.ensemble_size, opts.seed);
    let synthetic = |sigma: f64| ensemble.median_metric(sigma);

    // The metric is about 2 sigma^2 / mean|S21|.
    let mut lo = 0.0;
    let mut hi = 1.5 * (measured * scale / 2.0).sqrt();
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > opts.max_iterations {
            return Err(Error::NonConvergence("could not bracket the noise level".into()));
        }
        let s = synthetic(hi);
        if s.is_nan() {
            return Err(Error::NonConvergence("synthetic fits failed".into()));
        }
        if (s - measured).abs() <= opts.tolerance * measured {
            return Ok(hi);
        }
        if s > measured {
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    while iterations < opts.max_iterations {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let s = synthetic(mid);
        if s.is_nan() {
            return Err(Error::NonConvergence("synthetic fits failed".into()));
        }
        if (s - measured).abs() <= opts.tolerance * measured {
            return Ok(mid);
        }
        if s < measured {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NonConvergence(format!(
        "noise search did not match residuals within {} after {} iterations",
        opts.tolerance, opts.max_iterations
    )))
}

/// Ratio of largest to median residual metric above which a calibration
/// region is rejected as not flat.
pub const FLATNESS_LIMIT: f64 = 2.0;

/// Calibrate against the included fits in the inclusive index range
/// `[start, end]`, which must show a flat residual metric.
pub fn calibrate_noise_region(
    sweep: &SweepDataset,
    region: (usize, usize),
    opts: &NoiseCalibrationOptions,
) -> Result<f64> {
    let picked = region_fits(sweep, region)?;
    let pairs: Vec<(&Trace, &FitResult)> = picked.iter().map(|&k| (&sweep.traces[k], &sweep.fits[k])).collect();
    calibrate_noise_multi(&pairs, opts)
}

/// Included fit indices inside `region`, after the flatness check.
pub fn region_fits(sweep: &SweepDataset, (start, end): (usize, usize)) -> Result<Vec<usize>> {
    if start > end || end >= sweep.len() {
        return Err(Error::InvalidInput(format!(
            "calibration interval [{start}, {end}] outside sweep of {} points",
            sweep.len()
        )));
    }
    let picked: Vec<usize> = sweep.included().into_iter().filter(|k| (start..=end).contains(k)).collect();
    if picked.is_empty() {
        return Err(Error::Calibration("calibration interval has no usable fits".into()));
    }
    let mut metrics: Vec<f64> = picked.iter().map(|&k| sweep.fits[k].residual_metric).collect();
    let max = metrics.iter().copied().fold(0.0, f64::max);
    let med = median(&mut metrics);
    if med > 0.0 && max / med >= FLATNESS_LIMIT {
        return Err(Error::Calibration(format!(
            "calibration interval is not flat: max/median residual = {:.2}",
            max / med
        )));
    }
    Ok(picked)
}

/// Detector operating point: threshold on the residual metric and the
/// single-point error rates implied by Gaussian fits to the two ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorCalibration {
    pub threshold: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub noise_sigma: f64,
    /// (mean, std) of the noise-only residual metrics.
    pub gauss_noise: (f64, f64),
    /// (mean, std) of the residual metrics with the critical defect.
    pub gauss_tls: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdOptions {
    pub ensemble_size: usize,
    /// Window width in linewidths, centred on the resonance.
    pub span_kappa: f64,
    pub n_points: usize,
    pub seed: u64,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        Self { ensemble_size: 5000, span_kappa: 12.0, n_points: 201, seed: 0 }
    }
}

/// Residual metrics of fitted synthetic traces without and with a defect.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdEnsembles {
    pub noise: Vec<f64>,
    pub tls: Vec<f64>,
}

/// The weakest defect the detector is built to see: cooperativity 1 with
/// g = kappa/2, gamma = kappa, half a linewidth above the resonance.
pub fn critical_defect(params: &ResonatorParams) -> TlsDefect {
    let kappa = params.kappa();
    TlsDefect::new(params.f_r + kappa / 2.0, kappa / 2.0, kappa, CALIBRATION_TLS_TEMPERATURE)
}

pub fn simulate_threshold_ensembles(
    params: &ResonatorParams,
    noise_sigma: f64,
    opts: &ThresholdOptions,
) -> Result<ThresholdEnsembles> {
    params.validate()?;
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::InvalidInput(format!("noise sigma must be non-negative, got {noise_sigma}")));
    }
    if opts.ensemble_size < MIN_THRESHOLD_ENSEMBLE {
        return Err(Error::InvalidInput(format!(
            "ensemble size must be at least {MIN_THRESHOLD_ENSEMBLE}, got {}",
            opts.ensemble_size
        )));
    }
    if !(opts.span_kappa > 0.0) {
        return Err(Error::InvalidInput("span must be positive".into()));
    }
    let grid = linear_grid(params.f_r, opts.span_kappa * params.kappa(), opts.n_points);
    let tls = [critical_defect(params)];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut run = |defects: &[TlsDefect]| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(opts.ensemble_size);
        for _ in 0..opts.ensemble_size {
            let t = synth_trace(params, defects, &grid, noise_sigma, 0.0, &mut rng)?;
            if let Ok(fit) = fit_hanger(&t, Some(params)) {
                if fit.residual_metric.is_finite() {
                    out.push(fit.residual_metric);
                }
            }
        }
        Ok(out)
    };
    let noise = run(&[])?;
    let tls = run(&tls)?;
    Ok(ThresholdEnsembles { noise, tls })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

fn ln_normal(x: f64, (mu, sd): (f64, f64)) -> f64 {
    -0.5 * ((x - mu) / sd).powi(2) - sd.ln()
}

fn upper_tail(x: f64, (mu, sd): (f64, f64)) -> f64 {
    0.5 * erfc((x - mu) / (sd * std::f64::consts::SQRT_2))
}

/// Fit a Gaussian to each ensemble and put the threshold where the two
/// densities cross between their means.
pub fn calibration_from_ensembles(ens: &ThresholdEnsembles, noise_sigma: f64) -> Result<DetectorCalibration> {
    if ens.noise.len() < 2 || ens.tls.len() < 2 {
        return Err(Error::Calibration("too few successful fits in the ensembles".into()));
    }
    let (mn, sn) = mean_std(&ens.noise);
    let (mt, st) = mean_std(&ens.tls);
    let stderr = (sn * sn / ens.noise.len() as f64 + st * st / ens.tls.len() as f64).sqrt();
    if !(mt - mn > 3.0 * stderr) {
        return Err(Error::Calibration(format!(
            "defect and noise residuals are indistinguishable (means {mn:.3e} and {mt:.3e})"
        )));
    }
    // Floor the widths so a noiseless ensemble still defines a density.
    let floor = 1e-9 * (mt - mn);
    let gn = (mn, sn.max(floor));
    let gt = (mt, st.max(floor));
    let d = |x: f64| ln_normal(x, gn) - ln_normal(x, gt);
    let (mut lo, mut hi) = (mn, mt);
    if !(d(lo) > 0.0 && d(hi) < 0.0) {
        return Err(Error::Calibration("Gaussian fits do not cross between their means".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if d(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let threshold = 0.5 * (lo + hi);
    Ok(DetectorCalibration {
        threshold,
        fp: upper_tail(threshold, gn),
        fn_: upper_tail(-threshold, (-gt.0, gt.1)),
        noise_sigma,
        gauss_noise: gn,
        gauss_tls: gt,
    })
}

/// Simulate both ensembles and derive the operating point.
pub fn build_threshold(
    params: &ResonatorParams,
    noise_sigma: f64,
    opts: &ThresholdOptions,
) -> Result<DetectorCalibration> {
    let ens = simulate_threshold_ensembles(params, noise_sigma, opts)?;
    calibration_from_ensembles(&ens, noise_sigma)
}
