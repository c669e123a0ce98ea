//! From a flux sweep to a list of TLS detections: curve following,
//! exclusions, axis normalisation, detector calibration and peak finding.

mod axis;
mod calibrate;
mod peaks;
mod sweep;

pub use axis::{median_kappa, normalize_axis, resample_uniform, ResidualSeries, AXIS_STEP};
pub use calibrate::{
    build_threshold, calibrate_noise, calibrate_noise_multi, calibrate_noise_region, calibration_from_ensembles,
    critical_defect, region_fits, simulate_threshold_ensembles, DetectorCalibration, NoiseCalibrationOptions,
    ThresholdEnsembles, ThresholdOptions, CALIBRATION_TLS_TEMPERATURE, FLATNESS_LIMIT, MIN_THRESHOLD_ENSEMBLE,
};
pub use peaks::{find_peaks, DetectionEvent, MERGE_RADIUS_KAPPA};
pub use sweep::{
    apply_exclusions, curve_follow, interior_maximum, usable, Exclusion, ExclusionReason, SweepDataset,
};

use serde::{Deserialize, Serialize};

use crate::bayes::{true_rates, InferenceInput};
use crate::error::{Error, Result};
use crate::fitting::{FitResult, Trace};

/// Settings for [`detect`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Inclusive bias-index range with a flat residual metric.
    pub calibration_interval: (usize, usize),
    #[serde(default)]
    pub manual_exclusions: Vec<(usize, usize)>,
    #[serde(default)]
    pub noise: NoiseCalibrationOptions,
    #[serde(default)]
    pub threshold: ThresholdOptions,
}

/// Everything produced by one detection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub sweep: SweepDataset,
    pub kappa: f64,
    pub calibration: DetectorCalibration,
    pub series: ResidualSeries,
    pub events: Vec<DetectionEvent>,
}

impl DetectionOutcome {
    /// Detection count, bin count and true rates for the Bayesian step.
    pub fn inference_input(&self) -> Result<InferenceInput> {
        let n_bins = self.series.n_bins();
        if self.events.len() > n_bins {
            return Err(Error::Calibration(format!(
                "{} detections in only {n_bins} bins",
                self.events.len()
            )));
        }
        Ok(InferenceInput {
            n_detected: self.events.len(),
            n_bins,
            rates: true_rates(self.calibration.fp, self.calibration.fn_)?,
        })
    }
}

/// Fit whose residual metric is the median of `picks`.
fn median_fit<'a>(sweep: &'a SweepDataset, picks: &[usize]) -> (&'a Trace, &'a FitResult) {
    let mut sorted = picks.to_vec();
    sorted.sort_by(|&a, &b| sweep.fits[a].residual_metric.total_cmp(&sweep.fits[b].residual_metric));
    let k = sorted[sorted.len() / 2];
    (&sweep.traces[k], &sweep.fits[k])
}

/// Exclusions, noise calibration on the designated interval, threshold,
/// axis normalisation and peak finding.
pub fn detect(sweep: &SweepDataset, cfg: &DetectionConfig) -> Result<DetectionOutcome> {
    let sweep = apply_exclusions(sweep, &cfg.manual_exclusions)?;
    let kappa = median_kappa(&sweep)?;
    let picks = region_fits(&sweep, cfg.calibration_interval)?;
    let noise_sigma = calibrate_noise_region(&sweep, cfg.calibration_interval, &cfg.noise)?;

    let (trace, fit) = median_fit(&sweep, &picks);
    let span = trace.freqs[trace.len() - 1] - trace.freqs[0];
    let opts = ThresholdOptions { span_kappa: span / fit.kappa(), n_points: trace.len(), ..cfg.threshold };
    let calibration = build_threshold(&fit.params, noise_sigma, &opts)?;

    let series = normalize_axis(&sweep, kappa)?;
    let events = find_peaks(&series, calibration.threshold)?;
    Ok(DetectionOutcome { sweep, kappa, calibration, series, events })
}
