use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::rank::average_ranks;
use super::TestOutcome;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationKind {
    Pearson,
    Spearman,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!("lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::InvalidInput(format!("correlation needs at least 3 pairs, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value".into()));
    }
    Ok(())
}

/// Plain product-moment coefficient, clamped to [-1, 1]. Values within
/// rounding of +-1 are snapped, so exact linear relations give exactly +-1.
fn coefficient(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(if 1.0 - r.abs() < 8.0 * f64::EPSILON { r.signum() } else { r })
}

/// Two-sided p-value of r through t = r sqrt((n-2)/(1-r^2)).
fn t_p_value(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<TestOutcome> {
    check_pair(x, y)?;
    let r = coefficient(x, y)?;
    Ok(TestOutcome { statistic: r, p_value: t_p_value(r, x.len()) })
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<TestOutcome> {
    check_pair(x, y)?;
    let rho = coefficient(&average_ranks(x), &average_ranks(y))?;
    Ok(TestOutcome { statistic: rho, p_value: t_p_value(rho, x.len()) })
}

pub fn correlate(kind: CorrelationKind, x: &[f64], y: &[f64]) -> Result<TestOutcome> {
    match kind {
        CorrelationKind::Pearson => pearson(x, y),
        CorrelationKind::Spearman => spearman(x, y),
    }
}

/// Two-sided permutation p-value: (1 + #{|r_perm| >= |r|}) / (1 + repeats).
pub fn permutation_p_value(kind: CorrelationKind, x: &[f64], y: &[f64], repeats: usize, seed: u64) -> Result<f64> {
    let observed = correlate(kind, x, y)?.statistic.abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = y.to_vec();
    let mut hits = 0usize;
    for _ in 0..repeats {
        shuffled.shuffle(&mut rng);
        let r = correlate(kind, x, &shuffled)?.statistic.abs();
        if r >= observed - 1e-12 {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (repeats + 1) as f64)
}
