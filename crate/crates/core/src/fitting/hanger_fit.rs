use num_complex::Complex64;
use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::background::{background_split, default_window};
use super::residual::residual_metric;
use super::savgol::savgol;
use super::trace::Trace;
use crate::error::{Error, Result};
use crate::physics::ResonatorParams;

const NPARAM: usize = 8;
type Mat = SMatrix<f64, NPARAM, NPARAM>;
type Vector = SVector<f64, NPARAM>;

/// Damped least-squares settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub cost_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 200, cost_tolerance: 1e-8 }
    }
}

/// Outcome of a hanger-model fit. Uncertainties are ordered like
/// [`ResonatorParams::as_array`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ResonatorParams,
    pub residual_metric: f64,
    pub converged: bool,
    pub param_uncertainties: [f64; NPARAM],
    pub iterations: usize,
}

impl FitResult {
    pub fn kappa(&self) -> f64 {
        self.params.kappa()
    }
}

/// Parameters in the solver's frame: the phase offset is referred to `f_ref`
/// so that slope and offset decouple.
struct Problem<'a> {
    freqs: &'a [f64],
    data: &'a [Complex64],
    f_ref: f64,
}

impl Problem<'_> {
    fn to_internal(&self, p: &ResonatorParams) -> Vector {
        let mut q = Vector::from(p.as_array());
        q[7] = p.phase_offset + p.phase_slope * self.f_ref;
        q
    }

    fn to_params(&self, q: &Vector) -> ResonatorParams {
        let mut a: [f64; NPARAM] = (*q).into();
        a[7] = q[7] - q[6] * self.f_ref;
        ResonatorParams::from_array(a)
    }

    fn admissible(q: &Vector) -> bool {
        q.iter().all(|v| v.is_finite()) && q[0] > 0.0 && q[1] > 0.0 && q[2] > 0.0
    }

    #[inline]
    fn model(&self, q: &Vector, f: f64) -> Complex64 {
        let x = (f - q[0]) / q[0];
        let amp = q[4] * (1.0 + q[5] * x);
        let phase = Complex64::from_polar(1.0, q[6] * (f - self.f_ref) + q[7]);
        let coupling = Complex64::from_polar(q[1] / q[2], q[3]);
        let denom = Complex64::new(1.0, 2.0 * q[1] * x);
        amp * (1.0 - coupling / denom) * phase
    }

    fn cost(&self, q: &Vector) -> f64 {
        self.freqs
            .iter()
            .zip(self.data)
            .map(|(&f, d)| (self.model(q, f) - d).norm_sqr())
            .sum()
    }

    /// Normal matrix J^T J and gradient J^T r, accumulated per sample.
    fn normal_equations(&self, q: &Vector) -> (Mat, Vector) {
        let i = Complex64::i();
        let (f_r, q_l, q_e, theta, a, alpha) = (q[0], q[1], q[2], q[3], q[4], q[5]);
        let rot = Complex64::from_polar(1.0, theta);
        let c = q_l / q_e;
        let mut h = Mat::zeros();
        let mut g = Vector::zeros();
        let mut d = [Complex64::new(0.0, 0.0); NPARAM];
        for (&f, data) in self.freqs.iter().zip(self.data) {
            let x = (f - f_r) / f_r;
            let dx = -f / (f_r * f_r);
            let amp = a * (1.0 + alpha * x);
            let phase = Complex64::from_polar(1.0, q[6] * (f - self.f_ref) + q[7]);
            let denom = Complex64::new(1.0, 2.0 * q_l * x);
            let inv_d = 1.0 / denom;
            let resp = 1.0 - c * rot * inv_d;
            let s = amp * resp * phase;
            let ap = amp * phase;
            d[0] = phase * (a * alpha * dx * resp + amp * c * rot * 2.0 * i * q_l * dx * inv_d * inv_d);
            d[1] = -ap * rot * inv_d * inv_d / q_e;
            d[2] = ap * c * rot * inv_d / q_e;
            d[3] = -ap * i * c * rot * inv_d;
            d[4] = (1.0 + alpha * x) * resp * phase;
            d[5] = a * x * resp * phase;
            d[6] = i * (f - self.f_ref) * s;
            d[7] = i * s;
            let e = s - data;
            for r in 0..NPARAM {
                g[r] += d[r].re * e.re + d[r].im * e.im;
                for col in r..NPARAM {
                    h[(r, col)] += d[r].re * d[col].re + d[r].im * d[col].im;
                }
            }
        }
        for r in 0..NPARAM {
            for col in 0..r {
                h[(r, col)] = h[(col, r)];
            }
        }
        (h, g)
    }
}

fn solve(m: Mat, rhs: Vector) -> Option<Vector> {
    m.cholesky().map(|c| c.solve(&rhs)).or_else(|| m.lu().solve(&rhs))
}

/// Fit the hanger model to `trace`.
///
/// Without `init`, the starting point comes from [`initial_guess`], which
/// requires a detectable resonance. A fit that fails to converge is returned
/// with `converged = false` rather than as an error.
pub fn fit_hanger(trace: &Trace, init: Option<&ResonatorParams>) -> Result<FitResult> {
    fit_hanger_with(trace, init, &FitOptions::default())
}

pub fn fit_hanger_with(trace: &Trace, init: Option<&ResonatorParams>, opts: &FitOptions) -> Result<FitResult> {
    trace.validate()?;
    let start = match init {
        Some(p) => {
            if p.as_array().iter().any(|v| !v.is_finite()) || p.f_r <= 0.0 || p.q_loaded <= 0.0 || p.q_ext_mag <= 0.0 {
                return Err(Error::InvalidParameter(format!("bad initial parameters {p:?}")));
            }
            *p
        }
        None => initial_guess(trace)?,
    };
    let problem = Problem {
        freqs: &trace.freqs,
        data: &trace.s21,
        f_ref: 0.5 * (trace.freqs[0] + trace.freqs[trace.len() - 1]),
    };
    let mut q = problem.to_internal(&start);
    let mut cost = problem.cost(&q);
    let data_scale: f64 = trace.s21.iter().map(|z| z.norm_sqr()).sum();
    let negligible = 1e-30 * data_scale.max(f64::MIN_POSITIVE);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        if !cost.is_finite() {
            break;
        }
        if cost <= negligible {
            converged = true;
            break;
        }
        iterations += 1;
        let (h, g) = problem.normal_equations(&q);
        let diag_floor = 1e-12 * h.diagonal().max();
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = h;
            for k in 0..NPARAM {
                damped[(k, k)] += lambda * h[(k, k)].max(diag_floor);
            }
            let Some(step) = solve(damped, -g) else {
                lambda *= 10.0;
                continue;
            };
            let trial = q + step;
            let trial_cost = if Problem::admissible(&trial) { problem.cost(&trial) } else { f64::INFINITY };
            if trial_cost < cost {
                let rel = (cost - trial_cost) / cost;
                q = trial;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel < opts.cost_tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction left at any damping: a minimum to machine precision.
            converged = cost.is_finite();
            break;
        }
        if converged {
            break;
        }
    }

    let params = problem.to_params(&q);
    converged &= params.as_array().iter().all(|v| v.is_finite());
    let residual_metric = residual_metric(trace, &params).unwrap_or(f64::NAN);
    let param_uncertainties = uncertainties(&problem, &q, cost, trace.len());
    Ok(FitResult { params, residual_metric, converged, param_uncertainties, iterations })
}

fn uncertainties(problem: &Problem, q: &Vector, cost: f64, n: usize) -> [f64; NPARAM] {
    let dof = (2 * n).saturating_sub(NPARAM).max(1) as f64;
    let (h, _) = problem.normal_equations(q);
    let Some(cov) = h.try_inverse() else {
        return [f64::NAN; NPARAM];
    };
    let s2 = cost / dof;
    let mut out = [0.0; NPARAM];
    for k in 0..NPARAM {
        out[k] = (s2 * cov[(k, k)]).max(0.0).sqrt();
    }
    // phase_offset = q7 - q6 f_ref.
    let f = problem.f_ref;
    let var = cov[(7, 7)] + f * f * cov[(6, 6)] - 2.0 * f * cov[(6, 7)];
    out[7] = (s2 * var).max(0.0).sqrt();
    out
}

/// Map an angle into [-pi, pi).
fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Least-squares line through (x, y); returns (intercept at x = 0, slope).
fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return (my, 0.0);
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Background model used while building the initial guess.
#[derive(Clone, Copy)]
struct Background {
    f_ref: f64,
    amp_ref: f64,
    amp_slope: f64,
    phase_slope: f64,
    phase_ref: f64,
}

impl Background {
    fn at(&self, f: f64) -> Complex64 {
        let df = f - self.f_ref;
        Complex64::from_polar(self.amp_ref + self.amp_slope * df, self.phase_slope * df + self.phase_ref)
    }
}

/// Straight-line amplitude and phase through `samples` at `indices`.
/// Phases are unwrapped within each contiguous run of indices.
fn fit_background(freqs: &[f64], samples: &[Complex64], indices: &[usize], f_ref: f64) -> Result<Background> {
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for run in indices.chunk_by(|a, b| b - a == 1) {
        if run.len() < 2 {
            continue;
        }
        let mut prev = samples[run[0]].arg();
        let mut unwrapped = prev;
        let mut phases = vec![unwrapped];
        for &k in &run[1..] {
            let raw = samples[k].arg();
            unwrapped += wrap_angle(raw - prev);
            prev = raw;
            phases.push(unwrapped);
        }
        let fs: Vec<f64> = run.iter().map(|&k| freqs[k]).collect();
        let mf = fs.iter().sum::<f64>() / fs.len() as f64;
        let mp = phases.iter().sum::<f64>() / phases.len() as f64;
        for (f, p) in fs.iter().zip(&phases) {
            sxy += (f - mf) * (p - mp);
            sxx += (f - mf) * (f - mf);
        }
    }
    let phase_slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let phase_ref = indices
        .iter()
        .map(|&k| samples[k] * Complex64::from_polar(1.0, -phase_slope * (freqs[k] - f_ref)))
        .sum::<Complex64>()
        .arg();
    let xs: Vec<f64> = indices.iter().map(|&k| freqs[k] - f_ref).collect();
    let ys: Vec<f64> = indices.iter().map(|&k| samples[k].norm()).collect();
    let (amp_ref, amp_slope) = line_fit(&xs, &ys);
    if !(amp_ref > 0.0) {
        return Err(Error::NoResonance("background amplitude is not positive".into()));
    }
    Ok(Background { f_ref, amp_ref, amp_slope, phase_slope, phase_ref })
}

/// Resonance parameters (f_r, Q_l, |Q_e|, theta) from the Lorentzian
/// |1 - S21/background|^2, searched within `range`.
fn lorentzian_estimate(trace: &Trace, bg: &Background, range: std::ops::Range<usize>) -> Result<(f64, f64, f64, f64)> {
    let n = trace.len();
    let dev: Vec<Complex64> = (0..n).map(|k| 1.0 - trace.s21[k] / bg.at(trace.freqs[k])).collect();
    let window = ((default_window(n) / 2) | 1).max(5);
    let lorentz = savgol(&dev.iter().map(|z| z.norm_sqr()).collect::<Vec<_>>(), window, 2)?;
    let peak = range
        .max_by(|&a, &b| lorentz[a].total_cmp(&lorentz[b]))
        .unwrap_or(n / 2);
    let height = lorentz[peak];
    if !(height > 0.0) {
        return Err(Error::NoResonance("no dip after background removal".into()));
    }
    let step = trace.freqs[1] - trace.freqs[0];
    let mut f_r = trace.freqs[peak];
    if peak > 0 && peak + 1 < n {
        let (l, c, r) = (lorentz[peak - 1], lorentz[peak], lorentz[peak + 1]);
        let curv = l - 2.0 * c + r;
        if curv < 0.0 {
            f_r += 0.5 * (l - r) / curv * step;
        }
    }

    let half = height / 2.0;
    let crossing = |indices: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = peak;
        for k in indices {
            if lorentz[k] < half {
                let (a, b) = (lorentz[prev], lorentz[k]);
                let t = (a - half) / (a - b);
                return Some(trace.freqs[prev] + t * (trace.freqs[k] - trace.freqs[prev]));
            }
            prev = k;
        }
        None
    };
    let left = crossing(&mut (0..peak).rev());
    let right = crossing(&mut (peak + 1..n));
    let fwhm = match (left, right) {
        (Some(l), Some(r)) => r - l,
        (Some(l), None) => 2.0 * (f_r - l),
        (None, Some(r)) => 2.0 * (r - f_r),
        (None, None) => trace.freqs[n - 1] - trace.freqs[0],
    }
    .max(2.0 * step);

    let q_loaded = f_r / fwhm;
    let q_ext_mag = q_loaded / height.sqrt().min(0.999);
    let lo = peak.saturating_sub(1);
    let hi = (peak + 2).min(n);
    let theta = dev[lo..hi].iter().sum::<Complex64>().arg();
    Ok((f_r, q_loaded, q_ext_mag, theta))
}

/// Starting parameters from the background/resonance split.
///
/// The background region gives amplitude and phase slopes. After dividing the
/// background out, |1 - S21/background|^2 is a Lorentzian whose peak, height
/// and width give f_r, |Q_e| and Q_l, and whose phase at the peak gives theta.
/// A second pass re-estimates the background over the whole trace with that
/// resonance divided out, removing the bias from the resonance tails.
pub fn initial_guess(trace: &Trace) -> Result<ResonatorParams> {
    let split = background_split(trace)?;
    let n = trace.len();
    let f_ref = 0.5 * (trace.freqs[0] + trace.freqs[n - 1]);
    let mut bg_idx: Vec<usize> = split.background_indices().collect();
    if bg_idx.len() < 4 {
        // Resonance fills the window; fall back to the outermost samples.
        bg_idx = vec![0, 1, n - 2, n - 1];
    }
    let range = split.resonance_range();
    let mut bg = fit_background(&trace.freqs, &trace.s21, &bg_idx, f_ref)?;
    let mut res = lorentzian_estimate(trace, &bg, range.clone())?;

    let (f_r, q_l, q_e, theta) = res;
    let shape = ResonatorParams::new(f_r, q_l, q_e, theta);
    let stripped: Vec<Complex64> = trace
        .freqs
        .iter()
        .zip(&trace.s21)
        .map(|(&f, z)| z / shape.response(f))
        .collect();
    let all: Vec<usize> = (0..n).collect();
    if let Ok(refined) = fit_background(&trace.freqs, &stripped, &all, f_ref) {
        if let Ok(r) = lorentzian_estimate(trace, &refined, range) {
            bg = refined;
            res = r;
        }
    }

    let (f_r, q_loaded, q_ext_mag, theta) = res;
    let amplitude = bg.amp_ref + bg.amp_slope * (f_r - f_ref);
    Ok(ResonatorParams {
        f_r,
        q_loaded,
        q_ext_mag,
        theta,
        amplitude,
        alpha: bg.amp_slope * f_r / amplitude,
        phase_slope: bg.phase_slope,
        phase_offset: bg.phase_ref - bg.phase_slope * f_ref,
    })
}
