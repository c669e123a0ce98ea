use serde::{Deserialize, Serialize};

use super::posterior::PosteriorDensity;
use crate::error::{invalid, Result};

/// TLS density per GHz per square micron.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub rho: f64,
    pub ci68: (f64, f64),
    /// Swept frequency range (GHz).
    pub delta_f: f64,
    /// Total junction area (um^2).
    pub area: f64,
}

impl DensityEstimate {
    /// Distance from rho up to the upper credible bound.
    pub fn sigma_plus(&self) -> f64 {
        (self.ci68.1 - self.rho).max(0.0)
    }

    /// Distance from rho down to the lower credible bound.
    pub fn sigma_minus(&self) -> f64 {
        (self.rho - self.ci68.0).max(0.0)
    }
}

/// rho = posterior mean count / (delta_f * area); interval bounds scale alike.
pub fn density(post: &PosteriorDensity, delta_f: f64, area: f64) -> Result<DensityEstimate> {
    if !(delta_f > 0.0) || !delta_f.is_finite() {
        return Err(invalid(format!("delta_f must be positive, got {delta_f}")));
    }
    if !(area > 0.0) || !area.is_finite() {
        return Err(invalid(format!("area must be positive, got {area}")));
    }
    let norm = delta_f * area;
    Ok(DensityEstimate {
        rho: post.mean_count / norm,
        ci68: (post.ci68.0 / norm, post.ci68.1 / norm),
        delta_f,
        area,
    })
}

/// Mean density of one device and its aggregated error bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceSummary {
    pub rho_mean: f64,
    pub sigma_plus: f64,
    pub sigma_minus: f64,
    pub n_resonators: usize,
}

/// rho = mean of rho_i; sigma_pm = sqrt(sum sigma_pm_i^2) / N.
pub fn aggregate_device(estimates: &[DensityEstimate]) -> Result<DeviceSummary> {
    if estimates.is_empty() {
        return Err(invalid("cannot aggregate an empty device"));
    }
    let n = estimates.len() as f64;
    let rho_mean = estimates.iter().map(|e| e.rho).sum::<f64>() / n;
    let quad = |f: fn(&DensityEstimate) -> f64| estimates.iter().map(|e| f(e).powi(2)).sum::<f64>().sqrt() / n;
    Ok(DeviceSummary {
        rho_mean,
        sigma_plus: quad(DensityEstimate::sigma_plus),
        sigma_minus: quad(DensityEstimate::sigma_minus),
        n_resonators: estimates.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(mean: f64, ci: (f64, f64)) -> PosteriorDensity {
        PosteriorDensity { pmf: vec![], lambda_star: mean, mean_count: mean, ci68: ci }
    }

    #[test]
    fn zero_count_gives_zero_density() {
        let d = density(&post(0.0, (0.0, 0.0)), 1.0, 100.0).unwrap();
        assert_eq!(d.rho, 0.0);
    }

    #[test]
    fn treatment_scale() {
        let d = density(&post(20.0, (10.0, 30.0)), 1.0, 100.0).unwrap();
        assert!((d.rho - 0.20).abs() < 1e-15);
        assert!((d.ci68.0 - 0.10).abs() < 1e-15 && (d.ci68.1 - 0.30).abs() < 1e-15);
    }

    #[test]
    fn linear_scaling() {
        let p = post(7.0, (5.0, 9.0));
        let a = density(&p, 0.4, 50.0).unwrap();
        let b = density(&p, 0.4, 100.0).unwrap();
        let c = density(&p, 0.8, 50.0).unwrap();
        assert_eq!(a.rho, 2.0 * b.rho);
        assert_eq!(a.rho, 2.0 * c.rho);
        let p2 = post(14.0, (10.0, 18.0));
        assert_eq!(density(&p2, 0.4, 50.0).unwrap().rho, 2.0 * a.rho);
    }

    #[test]
    fn bad_normalisers() {
        assert!(density(&post(1.0, (0.0, 2.0)), 0.0, 1.0).is_err());
        assert!(density(&post(1.0, (0.0, 2.0)), 1.0, -1.0).is_err());
    }

    #[test]
    fn aggregation_rules() {
        let e = DensityEstimate { rho: 0.2, ci68: (0.1, 0.35), delta_f: 1.0, area: 1.0 };
        let one = aggregate_device(&[e]).unwrap();
        assert_eq!(one.rho_mean, 0.2);
        assert!((one.sigma_plus - 0.15).abs() < 1e-15 && (one.sigma_minus - 0.1).abs() < 1e-15);
        let two = aggregate_device(&[e, e]).unwrap();
        assert!((two.sigma_plus - 0.15 / 2f64.sqrt()).abs() < 1e-15);
        let many = aggregate_device(&[e; 16]).unwrap();
        assert!((many.rho_mean - 0.2).abs() < 1e-15);
        assert!((many.sigma_minus - 0.1 / 4.0).abs() < 1e-15);
        assert!(aggregate_device(&[]).is_err());
    }
}
