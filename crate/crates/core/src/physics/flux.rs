use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Flux tuning of a Josephson-junction array resonator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxConfig {
    /// Bare (maximum) resonator frequency (GHz).
    pub f_bare: f64,
    /// Number of islands in the array.
    pub n_islands: u32,
    /// Trapped flux quanta in the loop.
    #[serde(default)]
    pub m_trapped: i64,
    /// External flux per unit bias current (flux quanta per mA).
    pub flux_per_current: f64,
}

/// Which form of the flux dispersion to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FluxForm {
    #[default]
    Exact,
    /// Second-order expansion about the trapped-flux sweet spot.
    Quadratic,
}

impl FluxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_bare > 0.0) || !self.f_bare.is_finite() {
            return Err(invalid("f_bare must be positive"));
        }
        if self.n_islands < 1 {
            return Err(invalid("n_islands must be at least 1"));
        }
        if !self.flux_per_current.is_finite() {
            return Err(invalid("non-finite flux_per_current"));
        }
        Ok(())
    }

    /// Reduced flux Phi_ext/Phi_0 produced by `current` (mA).
    pub fn flux_at(&self, current: f64) -> f64 {
        current * self.flux_per_current
    }

    /// Frequency (GHz) at reduced flux `flux` = Phi_ext/Phi_0.
    pub fn frequency(&self, flux: f64, form: FluxForm) -> f64 {
        let detuning = flux - self.m_trapped as f64;
        let n = self.n_islands as f64;
        match form {
            FluxForm::Exact => {
                let u = 2.0 * PI / n * detuning;
                self.f_bare / (1.0 + 0.5 * u * u).sqrt()
            }
            FluxForm::Quadratic => self.f_bare * (1.0 - PI * PI / (n * n) * detuning * detuning),
        }
    }
}

/// Uniform bias currents from `start` to `end` (mA), with enough points that no
/// step moves the exact-form frequency by more than `max_step` (GHz).
pub fn bias_plan(cfg: &FluxConfig, start: f64, end: f64, max_step: f64) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !(max_step > 0.0) || !start.is_finite() || !end.is_finite() || start == end {
        return Err(invalid("bias plan needs distinct finite ends and a positive step"));
    }
    const PROBES: usize = 4096;
    let f = |i: f64| cfg.frequency(cfg.flux_at(i), FluxForm::Exact);
    let h = (end - start) / PROBES as f64;
    let largest = (0..PROBES)
        .map(|k| (f(start + (k + 1) as f64 * h) - f(start + k as f64 * h)).abs())
        .fold(0.0, f64::max);
    // Steps are at most 1/PROBES of the range, so the probe spacing bounds them.
    let steps = ((largest * PROBES as f64 / max_step).ceil() as usize).max(1);
    Ok((0..=steps).map(|k| start + (end - start) * k as f64 / steps as f64).collect())
}

/// Resonator frequency (GHz) at external flux `flux` in units of Phi_0.
pub fn flux_to_freq(cfg: &FluxConfig, flux: f64, form: FluxForm) -> Result<f64> {
    cfg.validate()?;
    if !flux.is_finite() {
        return Err(invalid("non-finite flux"));
    }
    Ok(cfg.frequency(flux, form))
}
