use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// f(I) = a I^2 + b I + c, resonator frequency against bias current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxParabola {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl FluxParabola {
    pub fn eval(&self, current: f64) -> f64 {
        (self.a * current + self.b) * current + self.c
    }

    /// df/dI.
    pub fn slope(&self, current: f64) -> f64 {
        2.0 * self.a * current + self.b
    }
}

/// Least-squares quadratic through `(bias, f0)` pairs.
pub fn fit_flux_parabola(biases: &[f64], f0s: &[f64]) -> Result<FluxParabola> {
    if biases.len() != f0s.len() {
        return Err(Error::InvalidInput("bias and frequency lists differ in length".into()));
    }
    if biases.len() < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 points, got {}", biases.len())));
    }
    if biases.iter().chain(f0s).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite bias or frequency".into()));
    }
    // Centre and scale the abscissa for conditioning.
    let n = biases.len() as f64;
    let mean = biases.iter().sum::<f64>() / n;
    let scale = biases.iter().map(|b| (b - mean).abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::RankDeficient("all biases are identical".into()));
    }
    let design = DMatrix::from_fn(biases.len(), 3, |r, c| ((biases[r] - mean) / scale).powi(c as i32));
    let rhs = DVector::from_column_slice(f0s);
    let svd = design.svd(true, true);
    let sv = &svd.singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= 1e-10 * smax {
        return Err(Error::RankDeficient("fewer than 3 distinct biases".into()));
    }
    let coef = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    let (c0, c1, c2) = (coef[0], coef[1], coef[2]);
    let a = c2 / (scale * scale);
    let b = c1 / scale - 2.0 * c2 * mean / (scale * scale);
    let c = c0 - c1 * mean / scale + c2 * mean * mean / (scale * scale);
    Ok(FluxParabola { a, b, c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{FluxConfig, FluxForm};

    #[test]
    fn exact_quadratic_is_recovered() {
        let biases: Vec<f64> = (0..20).map(|i| 0.3 + 0.05 * i as f64).collect();
        let f0s: Vec<f64> = biases.iter().map(|i| -0.02 * i * i + 0.013 * i + 7.1).collect();
        let p = fit_flux_parabola(&biases, &f0s).unwrap();
        assert!((p.a + 0.02).abs() < 1e-10);
        assert!((p.b - 0.013).abs() < 1e-10);
        assert!((p.c - 7.1).abs() < 1e-10);
        assert!((p.slope(1.0) - (-0.04 + 0.013)).abs() < 1e-10);
    }

    #[test]
    fn dispersion_near_maximum_is_quadratic() {
        let cfg = FluxConfig { f_bare: 8.0, n_islands: 100, m_trapped: 0, flux_per_current: 1.0 };
        let biases: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
        let f0s: Vec<f64> = biases.iter().map(|&i| cfg.frequency(i, FluxForm::Exact)).collect();
        let p = fit_flux_parabola(&biases, &f0s).unwrap();
        for (i, f) in biases.iter().zip(&f0s) {
            assert!((p.eval(*i) - f).abs() < 1e-4 * 8.0);
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(fit_flux_parabola(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::InvalidInput(_))));
        assert!(matches!(
            fit_flux_parabola(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::RankDeficient(_))
        ));
        assert!(matches!(
            fit_flux_parabola(&[1.0, 2.0, 1.0, 2.0], &[1.0, 2.0, 3.0, 4.0]),
            Err(Error::RankDeficient(_))
        ));
    }
}
