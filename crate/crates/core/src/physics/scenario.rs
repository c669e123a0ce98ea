use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::flux::{FluxConfig, FluxForm};
use super::resonator::{coupled_response, ResonatorParams, TlsDefect};
use crate::error::{invalid, Error, Result};
use crate::fitting::trace::{linear_grid, validate_grid, Trace, MIN_TRACE_POINTS};

/// Only a defect within this many linewidths of the resonance is modelled.
pub const DEFECT_REACH_KAPPA: f64 = 10.0;

/// Declarative description of a synthetic flux-sweep experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Resonator at zero flux detuning; `f_r` is replaced by the tuned frequency.
    pub resonator: ResonatorParams,
    pub flux: FluxConfig,
    #[serde(default)]
    pub defects: Vec<TlsDefect>,
    /// Additive Gaussian noise per quadrature.
    pub noise_sigma: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.resonator.validate()?;
        self.flux.validate()?;
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(invalid("noise_sigma must be finite and non-negative"));
        }
        for d in &self.defects {
            d.validate()?;
        }
        let resolution = self.resonator.kappa() / 4.0;
        let mut freqs: Vec<f64> = self.defects.iter().map(|d| d.f_tls).collect();
        freqs.sort_by(f64::total_cmp);
        if let Some(w) = freqs.windows(2).find(|w| w[1] - w[0] < resolution) {
            return Err(invalid(format!(
                "defects at {} and {} GHz collide within kappa/4 = {resolution:.3e} GHz",
                w[0], w[1]
            )));
        }
        Ok(())
    }

    /// Resonator parameters with the frequency set by the bias current (mA).
    pub fn tuned_params(&self, bias_current: f64) -> ResonatorParams {
        let flux = self.flux.flux_at(bias_current);
        ResonatorParams { f_r: self.flux.frequency(flux, FluxForm::Exact), ..self.resonator }
    }
}

/// The defect nearest to the resonance, if it lies within reach.
fn nearest_defect<'a>(params: &ResonatorParams, defects: &'a [TlsDefect]) -> Option<&'a TlsDefect> {
    let reach = DEFECT_REACH_KAPPA * params.kappa();
    defects
        .iter()
        .filter(|d| (d.f_tls - params.f_r).abs() <= reach)
        .min_by(|a, b| (a.f_tls - params.f_r).abs().total_cmp(&(b.f_tls - params.f_r).abs()))
}

/// Evaluate the response on `freqs` and add white Gaussian noise per quadrature.
///
/// Only the defect closest to the resonance (within ten linewidths) couples.
pub fn synth_trace<R: Rng + ?Sized>(
    params: &ResonatorParams,
    defects: &[TlsDefect],
    freqs: &[f64],
    noise_sigma: f64,
    bias_current: f64,
    rng: &mut R,
) -> Result<Trace> {
    validate_grid(freqs)?;
    params.validate()?;
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(invalid("noise_sigma must be finite and non-negative"));
    }
    for d in defects {
        d.validate()?;
    }
    let mut s21: Vec<Complex64> = match nearest_defect(params, defects) {
        Some(tls) => {
            let sigma_z = tls.polarization();
            freqs.iter().map(|&f| coupled_response(params, tls, sigma_z, f)).collect()
        }
        None => freqs.iter().map(|&f| params.response(f)).collect(),
    };
    if noise_sigma > 0.0 {
        for z in &mut s21 {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *z += Complex64::new(noise_sigma * re, noise_sigma * im);
        }
    }
    Ok(Trace { freqs: freqs.to_vec(), s21, bias_current })
}

/// Measure one trace of `scenario` at `bias_current` (mA) with the window
/// centred on `f_center` (GHz).
pub fn virtual_measure<R: Rng + ?Sized>(
    scenario: &Scenario,
    bias_current: f64,
    f_center: f64,
    span: f64,
    n_points: usize,
    rng: &mut R,
) -> Result<Trace> {
    if !(span > 0.0) || !span.is_finite() {
        return Err(Error::InvalidInput(format!("span must be positive, got {span}")));
    }
    if n_points < MIN_TRACE_POINTS {
        return Err(Error::InvalidInput(format!("need at least {MIN_TRACE_POINTS} points, got {n_points}")));
    }
    if !f_center.is_finite() || !bias_current.is_finite() {
        return Err(Error::InvalidInput("non-finite bias or centre frequency".into()));
    }
    let params = scenario.tuned_params(bias_current);
    let nearby: Vec<TlsDefect> = scenario
        .defects
        .iter()
        .filter(|d| (d.f_tls - params.f_r).abs() <= span / 2.0)
        .copied()
        .collect();
    let freqs = linear_grid(f_center, span, n_points);
    synth_trace(&params, &nearby, &freqs, scenario.noise_sigma, bias_current, rng)
}

/// Something that returns a trace for a requested bias and frequency window.
pub trait Instrument {
    fn measure(&mut self, bias_current: f64, f_center: f64, span: f64, n_points: usize) -> Result<Trace>;
}

/// A simulated VNA plus current source driven by a [`Scenario`].
#[derive(Debug, Clone)]
pub struct VirtualInstrument {
    scenario: Scenario,
    rng: ChaCha8Rng,
}

impl VirtualInstrument {
    /// Instrument seeded from the scenario's own seed.
    pub fn new(scenario: Scenario) -> Result<Self> {
        let seed = scenario.rng_seed;
        Self::with_rng(scenario, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(scenario: Scenario, rng: ChaCha8Rng) -> Result<Self> {
        scenario.validate()?;
        Ok(Self { scenario, rng })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }
}

impl Instrument for VirtualInstrument {
    fn measure(&mut self, bias_current: f64, f_center: f64, span: f64, n_points: usize) -> Result<Trace> {
        virtual_measure(&self.scenario, bias_current, f_center, span, n_points, &mut self.rng)
    }
}
