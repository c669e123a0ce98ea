use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::rank::{average_ranks, tie_sizes};
use super::TestOutcome;
use crate::error::{Error, Result};

/// Kruskal-Wallis H with tie correction and its chi-square p-value.
///
/// All values identical gives H = 0 and p = 1.
pub fn kruskal_wallis(groups: &[&[f64]]) -> Result<TestOutcome> {
    if groups.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 groups, got {}", groups.len())));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::InvalidInput(format!("every group needs at least 2 samples, got {}", g.len())));
    }
    let all: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite sample".into()));
    }
    let n = all.len() as f64;
    let ties: f64 = tie_sizes(&all).iter().map(|&t| (t as f64).powi(3) - t as f64).sum();
    let correction = 1.0 - ties / (n * n * n - n);
    if correction <= 0.0 {
        return Ok(TestOutcome { statistic: 0.0, p_value: 1.0 });
    }
    let ranks = average_ranks(&all);
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = ((12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction).max(0.0);
    let chi2 = ChiSquared::new((groups.len() - 1) as f64).expect("positive degrees of freedom");
    Ok(TestOutcome { statistic: h, p_value: chi2.sf(h) })
}
