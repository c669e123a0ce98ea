use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::constants::{GHZ, HBAR, K_B};
use crate::error::{invalid, Error, Result};

/// Parameters of the hanger-coupled resonator response.
///
/// All frequencies are ordinary frequencies in GHz; `phase_slope` is in
/// rad/GHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonatorParams {
    /// Resonance frequency (GHz).
    pub f_r: f64,
    /// Loaded quality factor.
    pub q_loaded: f64,
    /// Magnitude of the complex external quality factor.
    pub q_ext_mag: f64,
    /// Impedance-mismatch rotation of the external quality factor (rad).
    pub theta: f64,
    /// Off-resonant transmission amplitude.
    pub amplitude: f64,
    /// Relative slope of the background amplitude.
    pub alpha: f64,
    /// Phase slope (rad/GHz), cable delay times 2π.
    pub phase_slope: f64,
    /// Phase offset (rad).
    pub phase_offset: f64,
}

impl ResonatorParams {
    /// A resonator with flat unit background.
    pub fn new(f_r: f64, q_loaded: f64, q_ext_mag: f64, theta: f64) -> Self {
        Self {
            f_r,
            q_loaded,
            q_ext_mag,
            theta,
            amplitude: 1.0,
            alpha: 0.0,
            phase_slope: 0.0,
            phase_offset: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 8] {
        [
            self.f_r,
            self.q_loaded,
            self.q_ext_mag,
            self.theta,
            self.amplitude,
            self.alpha,
            self.phase_slope,
            self.phase_offset,
        ]
    }

    pub fn from_array(p: [f64; 8]) -> Self {
        Self {
            f_r: p[0],
            q_loaded: p[1],
            q_ext_mag: p[2],
            theta: p[3],
            amplitude: p[4],
            alpha: p[5],
            phase_slope: p[6],
            phase_offset: p[7],
        }
    }

    /// Full linewidth f_r / Q_l (GHz).
    pub fn kappa(&self) -> f64 {
        self.f_r / self.q_loaded
    }

    /// 1/Q_i = 1/Q_l - cos(theta)/|Q_e|.
    pub fn inverse_q_internal(&self) -> f64 {
        1.0 / self.q_loaded - self.theta.cos() / self.q_ext_mag
    }

    /// 1/Q_c = Re(1/Q_e) = cos(theta)/|Q_e|.
    pub fn inverse_q_coupling(&self) -> f64 {
        self.theta.cos() / self.q_ext_mag
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite resonator parameter in {self:?}")));
        }
        if self.f_r <= 0.0 || self.q_loaded <= 0.0 || self.q_ext_mag <= 0.0 {
            return Err(invalid("f_r, Q_l and |Q_e| must be positive"));
        }
        // Allow rounding noise on a critically coupled resonator.
        if self.inverse_q_internal() < -1e-12 / self.q_loaded {
            return Err(invalid(format!(
                "unphysical resonator: 1/Q_i = {:.3e} < 0",
                self.inverse_q_internal()
            )));
        }
        Ok(())
    }

    /// Background amplitude and phase factor shared by both response models.
    #[inline]
    pub(crate) fn background(&self, f: f64) -> Complex64 {
        let x = (f - self.f_r) / self.f_r;
        let amp = self.amplitude * (1.0 + self.alpha * x);
        Complex64::from_polar(amp, self.phase_slope * f + self.phase_offset)
    }

    /// Unchecked hanger response; callers validate once up front.
    #[inline]
    pub(crate) fn response(&self, f: f64) -> Complex64 {
        let x = (f - self.f_r) / self.f_r;
        let coupling = Complex64::from_polar(self.q_loaded / self.q_ext_mag, self.theta);
        let denom = Complex64::new(1.0, 2.0 * self.q_loaded * x);
        self.background(f) * (1.0 - coupling / denom)
    }
}

/// How the thermal polarization of a TLS is computed from hbar*omega/(k_B T).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThermalConvention {
    /// tanh(hbar*omega / k_B T).
    #[default]
    Unhalved,
    /// tanh(hbar*omega / 2 k_B T), the textbook two-level polarization.
    Halved,
}

/// A single two-level defect. Rates are ordinary frequencies in GHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlsDefect {
    /// Transition frequency (GHz).
    pub f_tls: f64,
    /// Coupling strength g (GHz).
    pub g: f64,
    /// Decay rate (GHz).
    pub gamma: f64,
    /// Bath temperature (K).
    pub temperature: f64,
    #[serde(default)]
    pub convention: ThermalConvention,
}

impl TlsDefect {
    pub fn new(f_tls: f64, g: f64, gamma: f64, temperature: f64) -> Self {
        Self {
            f_tls,
            g,
            gamma,
            temperature,
            convention: ThermalConvention::default(),
        }
    }

    /// The defect with cooperativity `c` and decay `gamma` for a resonator
    /// of linewidth `kappa`: g = sqrt(c kappa gamma) / 2.
    pub fn with_cooperativity(f_tls: f64, c: f64, kappa: f64, gamma: f64, temperature: f64) -> Self {
        Self::new(f_tls, 0.5 * (c * kappa * gamma).sqrt(), gamma, temperature)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.f_tls, self.g, self.gamma, self.temperature];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite TLS parameter in {self:?}")));
        }
        if self.g < 0.0 || self.gamma <= 0.0 || self.temperature <= 0.0 || self.f_tls <= 0.0 {
            return Err(invalid("TLS requires g >= 0, gamma > 0, T > 0, f_tls > 0"));
        }
        Ok(())
    }

    /// C = 4 g^2 / (kappa gamma).
    pub fn cooperativity(&self, params: &ResonatorParams) -> f64 {
        4.0 * self.g * self.g / (params.kappa() * self.gamma)
    }

    pub fn polarization(&self) -> f64 {
        // Validated temperature is positive, so this cannot fail.
        population(self.f_tls, self.temperature, self.convention)
    }
}

/// Thermal polarization <sigma_z> of a TLS at `f_tls` (GHz) and temperature (K).
pub fn thermal_population(f_tls: f64, temperature: f64, convention: ThermalConvention) -> Result<f64> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Domain(format!("temperature must be positive, got {temperature}")));
    }
    if !f_tls.is_finite() {
        return Err(invalid("non-finite TLS frequency"));
    }
    Ok(population(f_tls, temperature, convention))
}

fn population(f_tls: f64, temperature: f64, convention: ThermalConvention) -> f64 {
    let ratio = HBAR * 2.0 * PI * f_tls * GHZ / (K_B * temperature);
    match convention {
        ThermalConvention::Unhalved => ratio.tanh(),
        ThermalConvention::Halved => (0.5 * ratio).tanh(),
    }
}

/// Hanger transmission S21(f) of a bare resonator.
pub fn hanger_s21(params: &ResonatorParams, f: f64) -> Result<Complex64> {
    params.validate()?;
    if !f.is_finite() {
        return Err(invalid("non-finite probe frequency"));
    }
    Ok(params.response(f))
}

/// Hanger transmission with one TLS coupled to the resonator mode.
///
/// The TLS enters through the dispersive self-energy
/// g chi(f) = g^2 <sigma_z> / (f_tls - f + i <sigma_z> gamma / 2)
/// added to the resonator pole; background factors match [`hanger_s21`].
pub fn tls_s21(params: &ResonatorParams, tls: &TlsDefect, f: f64) -> Result<Complex64> {
    params.validate()?;
    tls.validate()?;
    if !f.is_finite() {
        return Err(invalid("non-finite probe frequency"));
    }
    Ok(coupled_response(params, tls, tls.polarization(), f))
}

#[inline]
pub(crate) fn coupled_response(params: &ResonatorParams, tls: &TlsDefect, sigma_z: f64, f: f64) -> Complex64 {
    let i = Complex64::i();
    let chi = tls.g * sigma_z / Complex64::new(tls.f_tls - f, sigma_z * tls.gamma / 2.0);
    let inv_qe = Complex64::from_polar(1.0 / params.q_ext_mag, params.theta);
    let denom = i * (f - params.f_r) + params.f_r / (2.0 * params.q_loaded) + i * tls.g * chi;
    let core = 1.0 - 0.5 * params.f_r * inv_qe / denom;
    params.background(f) * core
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ResonatorParams {
        ResonatorParams::new(6.0, 5000.0, 10000.0, 0.0)
    }

    #[test]
    fn on_resonance_dip() {
        let s = hanger_s21(&base(), 6.0).unwrap();
        assert!((s.re - 0.5).abs() < 1e-15 && s.im.abs() < 1e-15);
    }

    #[test]
    fn decoupled_limit_is_background() {
        let mut p = base();
        p.q_ext_mag = 1e15;
        p.alpha = 0.3;
        p.phase_slope = 2.0;
        p.phase_offset = 0.4;
        for k in -10..=10 {
            let f = p.f_r + k as f64 * p.kappa();
            let s = hanger_s21(&p, f).unwrap();
            assert!((s - p.background(f)).norm() < 1e-9);
        }
    }

    #[test]
    fn lorentzian_tail() {
        let p = base();
        let f = p.f_r + 50.0 * p.kappa();
        let s = hanger_s21(&p, f).unwrap();
        let expected = 0.5 / (1.0f64 + 100.0 * 100.0).sqrt();
        let dev = (s - 1.0).norm();
        assert!(dev < 0.006);
        assert!((dev - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = base();
        p.q_loaded = f64::NAN;
        assert!(matches!(hanger_s21(&p, 6.0), Err(Error::InvalidParameter(_))));
        // Q_l above |Q_e| with theta = 0 means negative internal loss.
        let p = ResonatorParams::new(6.0, 20000.0, 10000.0, 0.0);
        assert!(p.validate().is_err());
        assert!(hanger_s21(&base(), f64::INFINITY).is_err());
    }

    #[test]
    fn zero_coupling_matches_hanger() {
        let mut p = base();
        p.theta = 0.2;
        p.alpha = 0.1;
        p.phase_slope = 1.3;
        let tls = TlsDefect::new(6.0005, 0.0, 1e-3, 0.01);
        for k in -200..=200 {
            let f = p.f_r + k as f64 * p.kappa() / 20.0;
            let a = hanger_s21(&p, f).unwrap();
            let b = tls_s21(&p, &tls, f).unwrap();
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn far_detuned_tls_is_dispersive() {
        let p = base();
        let kappa = p.kappa();
        let tls = TlsDefect::new(p.f_r + 1e4 * kappa, kappa / 2.0, kappa, 0.01);
        for k in -50..=50 {
            let f = p.f_r + k as f64 * kappa / 10.0;
            let a = hanger_s21(&p, f).unwrap();
            let b = tls_s21(&p, &tls, f).unwrap();
            assert!((a - b).norm() / a.norm() < 1e-3);
        }
    }

    #[test]
    fn resonant_tls_splits_the_dip() {
        let p = base();
        let kappa = p.kappa();
        let g = 5.0 * kappa;
        let tls = TlsDefect::new(p.f_r, g, kappa / 10.0, 1e-9);
        // Brute-force local minima of |S21| on a dense grid.
        let n = 20001;
        let span = 20.0 * kappa;
        let freqs: Vec<f64> = (0..n).map(|k| p.f_r - span / 2.0 + span * k as f64 / (n - 1) as f64).collect();
        let mag: Vec<f64> = freqs.iter().map(|&f| tls_s21(&p, &tls, f).unwrap().norm()).collect();
        let minima: Vec<f64> = (1..n - 1)
            .filter(|&k| mag[k] < mag[k - 1] && mag[k] < mag[k + 1])
            .map(|k| freqs[k])
            .collect();
        assert_eq!(minima.len(), 2, "{minima:?}");
        let split = minima[1] - minima[0];
        assert!((split - 2.0 * g).abs() < 0.05 * 2.0 * g, "split {split} vs {}", 2.0 * g);
        // Avoided crossing is symmetric about the bare resonance.
        assert!(((minima[0] + minima[1]) / 2.0 - p.f_r).abs() < 0.02 * kappa);
    }

    #[test]
    fn polarization_limits() {
        let c = ThermalConvention::Unhalved;
        assert!((thermal_population(5.0, 1e-9, c).unwrap() - 1.0).abs() < 1e-12);
        assert!((thermal_population(5.0, 0.010, c).unwrap() - 1.0).abs() < 1e-10);
        // Frequency at which hbar*omega = k_B T for T = 0.1 K.
        let t = 0.1;
        let f = K_B * t / (HBAR * 2.0 * PI * GHZ);
        let v = thermal_population(f, t, c).unwrap();
        assert!((v - 0.761_594_155_955_764_9).abs() < 1e-12);
        let h = thermal_population(f, t, ThermalConvention::Halved).unwrap();
        assert!((h - 0.5f64.tanh()).abs() < 1e-12);
        assert!(matches!(thermal_population(5.0, 0.0, c), Err(Error::Domain(_))));
        assert!(thermal_population(5.0, -1.0, c).is_err());
    }

    #[test]
    fn cooperativity_of_critical_tls() {
        let p = base();
        let k = p.kappa();
        let tls = TlsDefect::new(p.f_r + k / 2.0, k / 2.0, k, 0.01);
        assert!((tls.cooperativity(&p) - 1.0).abs() < 1e-12);
        let t4 = TlsDefect::with_cooperativity(p.f_r, 4.0, k, k, 0.01);
        assert!((t4.cooperativity(&p) - 4.0).abs() < 1e-12);
    }
}
