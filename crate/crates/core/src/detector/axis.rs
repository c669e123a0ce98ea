use serde::{Deserialize, Serialize};

use super::sweep::{usable, ExclusionReason, SweepDataset};
use crate::error::{Error, Result};
use crate::fitting::fit_flux_parabola;

/// Grid spacing of the normalised axis, in linewidths.
pub const AXIS_STEP: f64 = 0.25;

/// Residual metric against cumulative frequency shift in units of the
/// linewidth, on a uniform grid of [`AXIS_STEP`].
///
/// Points that fall in an excluded interval are kept on the axis with
/// `valid = false` and residual 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries {
    pub shift_axis: Vec<f64>,
    pub residuals: Vec<f64>,
    pub valid: Vec<bool>,
    /// Resonator frequency from the flux parabola (GHz).
    pub frequency: Vec<f64>,
    pub bias_current: Vec<f64>,
    /// Linewidth used for the normalisation (GHz).
    pub kappa: f64,
}

impl ResidualSeries {
    pub fn len(&self) -> usize {
        self.shift_axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shift_axis.is_empty()
    }

    /// Number of one-linewidth bins covered by valid points.
    pub fn n_bins(&self) -> usize {
        (self.valid.iter().filter(|&&v| v).count() as f64 * AXIS_STEP + 1e-9).floor() as usize
    }

    /// Frequency span covered by valid points (GHz).
    pub fn swept_frequency(&self) -> f64 {
        self.valid.iter().filter(|&&v| v).count() as f64 * AXIS_STEP * self.kappa
    }
}

/// Median fitted linewidth over the included fits.
pub fn median_kappa(sweep: &SweepDataset) -> Result<f64> {
    let mut k: Vec<f64> = sweep.included().iter().map(|&i| sweep.fits[i].kappa()).collect();
    if k.is_empty() {
        return Err(Error::InvalidInput("no included fits".into()));
    }
    k.sort_by(f64::total_cmp);
    Ok(k[k.len() / 2])
}

/// Position of `x` between samples: `(j, t)` with `axis[j] <= x`, or `t == 0`
/// on an exact hit.
fn locate(axis: &[f64], x: f64, from: usize) -> (usize, f64) {
    let mut j = from;
    while j + 1 < axis.len() && axis[j + 1] <= x {
        j += 1;
    }
    if axis[j] == x || j + 1 == axis.len() {
        (j, 0.0)
    } else {
        (j, (x - axis[j]) / (axis[j + 1] - axis[j]))
    }
}

/// Uniform grid from `axis[0]` in steps of [`AXIS_STEP`], not beyond the last sample.
fn uniform_grid(axis: &[f64]) -> Vec<f64> {
    let start = axis[0];
    let last = axis[axis.len() - 1];
    let count = ((last - start) / AXIS_STEP + 1e-9).floor() as usize + 1;
    (0..count).map(|k| (start + k as f64 * AXIS_STEP).min(last)).collect()
}

fn check_axis(axis: &[f64]) -> Result<()> {
    if axis.len() < 2 {
        return Err(Error::InvalidInput("axis needs at least two samples".into()));
    }
    if axis.iter().any(|x| !x.is_finite()) || axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("axis must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// Linearly interpolate `values` from a strictly increasing `axis` onto the
/// uniform grid. A uniform input on the same grid comes back unchanged.
pub fn resample_uniform(axis: &[f64], values: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_axis(axis)?;
    if axis.len() != values.len() {
        return Err(Error::InvalidInput("axis and values differ in length".into()));
    }
    let grid = uniform_grid(axis);
    let mut j = 0;
    let out = grid
        .iter()
        .map(|&x| {
            let (k, t) = locate(axis, x, j);
            j = k;
            if t == 0.0 {
                values[k]
            } else {
                values[k] + t * (values[k + 1] - values[k])
            }
        })
        .collect();
    Ok((grid, out))
}

/// Map the bias axis onto cumulative |delta f0| / kappa using a parabola
/// through the included fits, then resample the residual metric onto the
/// uniform grid.
///
/// The axis ends at the last included point, so biases past a frequency
/// maximum never appear. Interior exclusions and failed fits become invalid
/// points.
pub fn normalize_axis(sweep: &SweepDataset, kappa: f64) -> Result<ResidualSeries> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidInput(format!("kappa must be positive, got {kappa}")));
    }
    let included = sweep.included();
    if included.len() < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 included fits, got {}", included.len())));
    }
    let biases = sweep.bias_currents();
    let f0: Vec<f64> = included.iter().map(|&k| sweep.fits[k].params.f_r).collect();
    let inc_bias: Vec<f64> = included.iter().map(|&k| biases[k]).collect();
    let parabola = fit_flux_parabola(&inc_bias, &f0)?;

    let first = included[0];
    let last = *included.last().unwrap();
    let past_max = |k: usize| {
        sweep.exclusions.iter().any(|e| e.reason == ExclusionReason::PastMaximum && e.contains(k))
    };

    // Samples on the shift axis; repeated positions keep the first sample.
    let mut axis = Vec::new();
    let mut resid = Vec::new();
    let mut ok = Vec::new();
    let mut bias = Vec::new();
    let mut freq = Vec::new();
    let mut shift = 0.0;
    let mut prev_f = parabola.eval(biases[first]);
    for k in first..=last {
        if past_max(k) {
            break;
        }
        let f = parabola.eval(biases[k]);
        shift += (f - prev_f).abs() / kappa;
        prev_f = f;
        if axis.last().is_some_and(|&a| shift <= a) {
            continue;
        }
        let valid = !sweep.is_excluded(k) && usable(&sweep.fits[k]);
        axis.push(shift);
        resid.push(if valid { sweep.fits[k].residual_metric.max(0.0) } else { 0.0 });
        ok.push(valid);
        bias.push(biases[k]);
        freq.push(f);
    }
    if axis.len() < 2 || shift == 0.0 {
        return Err(Error::Degenerate("sweep covers zero frequency shift".into()));
    }

    let grid = uniform_grid(&axis);
    let mut series = ResidualSeries {
        shift_axis: Vec::with_capacity(grid.len()),
        residuals: Vec::with_capacity(grid.len()),
        valid: Vec::with_capacity(grid.len()),
        frequency: Vec::with_capacity(grid.len()),
        bias_current: Vec::with_capacity(grid.len()),
        kappa,
    };
    let lerp = |v: &[f64], j: usize, t: f64| if t == 0.0 { v[j] } else { v[j] + t * (v[j + 1] - v[j]) };
    let mut j = 0;
    for &x in &grid {
        let (k, t) = locate(&axis, x, j);
        j = k;
        let valid = ok[k] && (t == 0.0 || ok[k + 1]);
        series.shift_axis.push(x);
        series.residuals.push(if valid { lerp(&resid, k, t) } else { 0.0 });
        series.valid.push(valid);
        series.frequency.push(lerp(&freq, k, t));
        series.bias_current.push(lerp(&bias, k, t));
    }
    Ok(series)
}
