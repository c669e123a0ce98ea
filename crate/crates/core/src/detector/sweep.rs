use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{fit_hanger, FitResult, Trace};
use crate::physics::{Instrument, ResonatorParams};

/// Why a run of bias points is left out of the analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    /// Resonance collides with a neighbouring mode.
    Collision,
    /// Beyond the frequency maximum, where the sweep retraces itself.
    PastMaximum,
    /// Fit failure or an explicit user choice.
    Manual,
}

impl ExclusionReason {
    fn priority(self) -> u8 {
        match self {
            Self::PastMaximum => 3,
            Self::Collision => 2,
            Self::Manual => 1,
        }
    }
}

/// Inclusive range of bias indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub start: usize,
    pub end: usize,
    pub reason: ExclusionReason,
}

impl Exclusion {
    pub fn contains(&self, index: usize) -> bool {
        (self.start..=self.end).contains(&index)
    }
}

/// Traces of a flux sweep with one fit each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDataset {
    pub traces: Vec<Trace>,
    pub fits: Vec<FitResult>,
    pub exclusions: Vec<Exclusion>,
}

impl SweepDataset {
    /// Fits every trace from scratch; failed fits are excluded.
    pub fn from_traces(traces: Vec<Trace>) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::InvalidInput("sweep has no traces".into()));
        }
        let mut fits = Vec::with_capacity(traces.len());
        let mut prev: Option<ResonatorParams> = None;
        for t in &traces {
            let fit = fit_step(t, prev.as_ref());
            if usable(&fit) {
                prev = Some(fit.params);
            }
            fits.push(fit);
        }
        let exclusions = failure_exclusions(&fits);
        Ok(Self { traces, fits, exclusions })
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.traces.len() != self.fits.len() {
            return Err(Error::InvalidInput(format!(
                "{} traces but {} fits",
                self.traces.len(),
                self.fits.len()
            )));
        }
        check_intervals(self.exclusions.iter().map(|e| (e.start, e.end)), self.len())?;
        Ok(())
    }

    pub fn is_excluded(&self, index: usize) -> bool {
        self.exclusions.iter().any(|e| e.contains(index))
    }

    /// Indices that are neither excluded nor failed fits.
    pub fn included(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| !self.is_excluded(k) && usable(&self.fits[k])).collect()
    }

    pub fn bias_currents(&self) -> Vec<f64> {
        self.traces.iter().map(|t| t.bias_current).collect()
    }
}

/// A fit that stopped at the iteration cap still has a meaningful residual;
/// only a fit without one counts as failed.
pub fn usable(fit: &FitResult) -> bool {
    fit.residual_metric.is_finite() && fit.params.as_array().iter().all(|v| v.is_finite())
}

/// Fit from the automatic guess and from the previous step's parameters and
/// keep whichever fits better.
fn fit_step(trace: &Trace, prev: Option<&ResonatorParams>) -> FitResult {
    let auto = fit_hanger(trace, None).ok();
    let carried = prev.and_then(|p| {
        let centre = 0.5 * (trace.freqs[0] + trace.freqs[trace.len() - 1]);
        let seed = ResonatorParams { f_r: centre, ..*p };
        fit_hanger(trace, Some(&seed)).ok()
    });
    let score = |f: &FitResult| if usable(f) { f.residual_metric } else { f64::INFINITY };
    match (auto, carried) {
        (Some(a), Some(c)) => {
            if score(&c) < score(&a) {
                c
            } else {
                a
            }
        }
        (Some(a), None) => a,
        (None, Some(c)) => c,
        (None, None) => FitResult {
            params: prev.copied().unwrap_or_else(|| ResonatorParams::new(f64::NAN, f64::NAN, f64::NAN, 0.0)),
            residual_metric: f64::NAN,
            converged: false,
            param_uncertainties: [f64::NAN; 8],
            iterations: 0,
        },
    }
}

fn failure_exclusions(fits: &[FitResult]) -> Vec<Exclusion> {
    let reasons: Vec<Option<ExclusionReason>> =
        fits.iter().map(|f| (!usable(f)).then_some(ExclusionReason::Manual)).collect();
    run_length(&reasons)
}

/// Step through `bias_plan`, re-centring each window on the previous fitted
/// resonance frequency.
pub fn curve_follow(
    instrument: &mut dyn Instrument,
    bias_plan: &[f64],
    span: f64,
    n_points: usize,
    start_center: f64,
) -> Result<SweepDataset> {
    if bias_plan.is_empty() {
        return Err(Error::InvalidInput("bias plan is empty".into()));
    }
    let mut center = start_center;
    let mut prev: Option<ResonatorParams> = None;
    let mut traces = Vec::with_capacity(bias_plan.len());
    let mut fits = Vec::with_capacity(bias_plan.len());
    for &bias in bias_plan {
        let trace = instrument.measure(bias, center, span, n_points)?;
        let fit = fit_step(&trace, prev.as_ref());
        if usable(&fit) && (fit.params.f_r - center).abs() < span {
            center = fit.params.f_r;
            prev = Some(fit.params);
        }
        traces.push(trace);
        fits.push(fit);
    }
    let exclusions = failure_exclusions(&fits);
    Ok(SweepDataset { traces, fits, exclusions })
}

fn check_intervals(intervals: impl Iterator<Item = (usize, usize)>, len: usize) -> Result<()> {
    let mut sorted: Vec<(usize, usize)> = intervals.collect();
    sorted.sort();
    for &(s, e) in &sorted {
        if s > e {
            return Err(Error::InvalidInput(format!("interval [{s}, {e}] has start after end")));
        }
        if e >= len {
            return Err(Error::InvalidInput(format!("interval [{s}, {e}] outside sweep of {len} points")));
        }
    }
    if let Some(w) = sorted.windows(2).find(|w| w[1].0 <= w[0].1) {
        return Err(Error::InvalidInput(format!(
            "intervals [{}, {}] and [{}, {}] overlap",
            w[0].0, w[0].1, w[1].0, w[1].1
        )));
    }
    Ok(())
}

fn run_length(reasons: &[Option<ExclusionReason>]) -> Vec<Exclusion> {
    let mut out: Vec<Exclusion> = Vec::new();
    for (k, r) in reasons.iter().enumerate() {
        let Some(reason) = *r else { continue };
        match out.last_mut() {
            Some(last) if last.end + 1 == k && last.reason == reason => last.end = k,
            _ => out.push(Exclusion { start: k, end: k, reason }),
        }
    }
    out
}

/// Index of the largest fitted frequency when it lies strictly inside the sweep.
pub fn interior_maximum(sweep: &SweepDataset) -> Option<usize> {
    let fitted: Vec<usize> = (0..sweep.len()).filter(|&k| usable(&sweep.fits[k])).collect();
    let &k = fitted
        .iter()
        .max_by(|&&a, &&b| sweep.fits[a].params.f_r.total_cmp(&sweep.fits[b].params.f_r))?;
    let first = *fitted.first()?;
    let last = *fitted.last()?;
    (k > first && k < last).then_some(k)
}

/// Add user-designated collision intervals and exclude everything after an
/// interior frequency maximum, so no part of the spectrum is counted twice.
pub fn apply_exclusions(sweep: &SweepDataset, manual: &[(usize, usize)]) -> Result<SweepDataset> {
    sweep.validate()?;
    check_intervals(manual.iter().copied(), sweep.len())?;
    let mut reasons: Vec<Option<ExclusionReason>> = vec![None; sweep.len()];
    let mut mark = |k: usize, r: ExclusionReason| {
        if reasons[k].is_none_or(|old| old.priority() < r.priority()) {
            reasons[k] = Some(r);
        }
    };
    for e in &sweep.exclusions {
        for k in e.start..=e.end {
            mark(k, e.reason);
        }
    }
    for &(s, e) in manual {
        for k in s..=e {
            mark(k, ExclusionReason::Collision);
        }
    }
    if let Some(peak) = interior_maximum(sweep) {
        for k in peak + 1..sweep.len() {
            mark(k, ExclusionReason::PastMaximum);
        }
    }
    Ok(SweepDataset { traces: sweep.traces.clone(), fits: sweep.fits.clone(), exclusions: run_length(&reasons) })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Sweep with the given fitted frequencies and no trace samples.
    pub(crate) fn fake_sweep(biases: &[f64], f0: &[f64]) -> SweepDataset {
        let traces = biases.iter().map(|&b| Trace { freqs: vec![], s21: vec![], bias_current: b }).collect();
        let fits = f0
            .iter()
            .map(|&f| FitResult {
                params: ResonatorParams::new(f, 2000.0, 4000.0, 0.0),
                residual_metric: 1e-3,
                converged: true,
                param_uncertainties: [0.0; 8],
                iterations: 1,
            })
            .collect();
        SweepDataset { traces, fits, exclusions: vec![] }
    }

    fn linear(n: usize) -> SweepDataset {
        let b: Vec<f64> = (0..n).map(|k| k as f64).collect();
        let f: Vec<f64> = b.iter().map(|x| 7.0 + 1e-3 * x).collect();
        fake_sweep(&b, &f)
    }

    #[test]
    fn monotone_sweep_has_no_past_maximum() {
        let out = apply_exclusions(&linear(20), &[]).unwrap();
        assert!(out.exclusions.is_empty());
        let b: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let f: Vec<f64> = b.iter().map(|x| 7.0 - 1e-3 * x).collect();
        assert!(apply_exclusions(&fake_sweep(&b, &f), &[]).unwrap().exclusions.is_empty());
    }

    #[test]
    fn parabolic_sweep_excludes_after_maximum() {
        // f0 through a flux maximum at bias 12.
        let b: Vec<f64> = (0..30).map(|k| k as f64).collect();
        let f: Vec<f64> = b.iter().map(|x| 7.0 - 1e-4 * (x - 12.0).powi(2)).collect();
        let out = apply_exclusions(&fake_sweep(&b, &f), &[]).unwrap();
        assert_eq!(out.exclusions, vec![Exclusion { start: 13, end: 29, reason: ExclusionReason::PastMaximum }]);
        assert_eq!(out.included(), (0..=12).collect::<Vec<_>>());
    }

    #[test]
    fn malformed_intervals_are_rejected() {
        let s = linear(10);
        assert!(apply_exclusions(&s, &[(8, 10)]).is_err());
        assert!(apply_exclusions(&s, &[(5, 3)]).is_err());
        assert!(apply_exclusions(&s, &[(1, 4), (4, 6)]).is_err());
        assert!(apply_exclusions(&s, &[(1, 3), (4, 6)]).is_ok());
    }

    #[test]
    fn past_maximum_outranks_collision() {
        let b: Vec<f64> = (0..30).map(|k| k as f64).collect();
        let f: Vec<f64> = b.iter().map(|x| 7.0 - 1e-4 * (x - 12.0).powi(2)).collect();
        let out = apply_exclusions(&fake_sweep(&b, &f), &[(3, 4), (10, 15)]).unwrap();
        assert_eq!(
            out.exclusions,
            vec![
                Exclusion { start: 3, end: 4, reason: ExclusionReason::Collision },
                Exclusion { start: 10, end: 12, reason: ExclusionReason::Collision },
                Exclusion { start: 13, end: 29, reason: ExclusionReason::PastMaximum },
            ]
        );
    }

    #[test]
    fn failed_fits_are_tagged_manual() {
        let mut s = linear(10);
        s.fits[3].converged = false;
        s.fits[4].residual_metric = f64::NAN;
        s.fits[5].residual_metric = f64::NAN;
        s.exclusions = failure_exclusions(&s.fits);
        assert_eq!(s.exclusions, vec![Exclusion { start: 4, end: 5, reason: ExclusionReason::Manual }]);
        assert!(!s.included().contains(&4));
        assert!(s.included().contains(&3));
    }

    struct Never;
    impl Instrument for Never {
        fn measure(&mut self, _: f64, _: f64, _: f64, _: usize) -> Result<Trace> {
            unreachable!()
        }
    }

    #[test]
    fn empty_plan_is_an_error() {
        assert!(matches!(curve_follow(&mut Never, &[], 0.01, 201, 7.0), Err(Error::InvalidInput(_))));
    }

    proptest! {
        #[test]
        fn exclusions_stay_in_range_and_disjoint(
            peak in 0.0f64..40.0,
            cuts in proptest::collection::vec((0usize..40, 0usize..4), 0..4),
        ) {
            let b: Vec<f64> = (0..40).map(|k| k as f64).collect();
            let f: Vec<f64> = b.iter().map(|x| 7.0 - 1e-4 * (x - peak).powi(2)).collect();
            let s = fake_sweep(&b, &f);
            // Turn the cuts into disjoint intervals.
            let mut manual = Vec::new();
            let mut next = 0;
            let mut sorted = cuts.clone();
            sorted.sort();
            for (start, len) in sorted {
                let start = start.max(next);
                let end = (start + len).min(39);
                if start <= end {
                    manual.push((start, end));
                    next = end + 1;
                }
                if next > 39 { break; }
            }
            let out = apply_exclusions(&s, &manual).unwrap();
            prop_assert!(out.validate().is_ok());
            for &(a, e) in &manual {
                for k in a..=e {
                    prop_assert!(out.is_excluded(k));
                }
            }
        }
    }
}
