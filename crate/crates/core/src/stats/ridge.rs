use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub const MIN_OBSERVATIONS: usize = 4;

/// Log-spaced ridge penalties from 1e-3 to 1e3, four per decade.
pub fn alpha_grid() -> Vec<f64> {
    (0..=24).map(|k| 10f64.powf(-3.0 + 0.25 * k as f64)).collect()
}

/// Ridge model on standardised features with an unpenalised intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    means: Vec<f64>,
    scales: Vec<f64>,
    /// Coefficients on the standardised features.
    pub coef: Vec<f64>,
    pub intercept: f64,
}

/// Checks a column-major design against its target.
pub(crate) fn check_design(columns: &[Vec<f64>], target: &[f64]) -> Result<()> {
    let n = target.len();
    if columns.is_empty() {
        return Err(Error::InvalidInput("no features".into()));
    }
    if n < MIN_OBSERVATIONS {
        return Err(Error::InvalidInput(format!("need at least {MIN_OBSERVATIONS} observations, got {n}")));
    }
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidInput("feature columns and target differ in length".into()));
    }
    if columns.iter().flatten().chain(target).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in design".into()));
    }
    Ok(())
}

impl RidgeModel {
    /// Closed-form fit on the rows in `rows`.
    fn fit_rows(columns: &[Vec<f64>], target: &[f64], rows: &[usize], alpha: f64) -> Result<Self> {
        let p = columns.len();
        let m = rows.len() as f64;
        let mut means = Vec::with_capacity(p);
        let mut scales = Vec::with_capacity(p);
        for c in columns {
            let mean = rows.iter().map(|&r| c[r]).sum::<f64>() / m;
            let sd = (rows.iter().map(|&r| (c[r] - mean).powi(2)).sum::<f64>() / m).sqrt();
            means.push(mean);
            scales.push(if sd > 0.0 { sd } else { 1.0 });
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| (columns[j][rows[i]] - means[j]) / scales[j]);
        let y_mean = rows.iter().map(|&r| target[r]).sum::<f64>() / m;
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| target[r] - y_mean));
        let mut gram = x.transpose() * &x;
        for k in 0..p {
            gram[(k, k)] += alpha;
        }
        let coef = gram
            .cholesky()
            .ok_or_else(|| Error::RankDeficient("ridge normal equations".into()))?
            .solve(&(x.transpose() * y));
        Ok(RidgeModel { means, scales, coef: coef.iter().copied().collect(), intercept: y_mean })
    }

    pub fn fit(columns: &[Vec<f64>], target: &[f64], alpha: f64) -> Result<Self> {
        check_design(columns, target)?;
        check_alpha(alpha)?;
        let rows: Vec<usize> = (0..target.len()).collect();
        Self::fit_rows(columns, target, &rows, alpha)
    }

    /// Prediction for observation `row` of `columns`.
    pub fn predict_row(&self, columns: &[Vec<f64>], row: usize) -> f64 {
        self.intercept
            + columns.iter().enumerate().map(|(j, c)| self.coef[j] * (c[row] - self.means[j]) / self.scales[j]).sum::<f64>()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("ridge alpha must be positive, got {alpha}")));
    }
    Ok(())
}

/// Leave-one-out R^2: each observation predicted by a model refit without it
/// (standardisation included), scored against the full-sample mean.
pub fn loocv_r2(columns: &[Vec<f64>], target: &[f64], alpha: f64) -> Result<f64> {
    check_design(columns, target)?;
    check_alpha(alpha)?;
    loocv_r2_unchecked(columns, target, alpha)
}

fn loocv_r2_unchecked(columns: &[Vec<f64>], target: &[f64], alpha: f64) -> Result<f64> {
    Ok(loocv_unchecked(columns, target, alpha)?.r2)
}

/// Leave-one-out score with the spread of its per-observation errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoocvScore {
    pub r2: f64,
    /// Standard error of `r2` from the spread of the squared errors.
    pub r2_stderr: f64,
}

pub fn loocv_score(columns: &[Vec<f64>], target: &[f64], alpha: f64) -> Result<LoocvScore> {
    check_design(columns, target)?;
    check_alpha(alpha)?;
    loocv_unchecked(columns, target, alpha)
}

fn loocv_unchecked(columns: &[Vec<f64>], target: &[f64], alpha: f64) -> Result<LoocvScore> {
    let n = target.len();
    let mean = target.iter().sum::<f64>() / n as f64;
    let sst: f64 = target.iter().map(|v| (v - mean).powi(2)).sum();
    if !(sst > 0.0) {
        return Err(Error::Degenerate("target has zero variance".into()));
    }
    let mut rows: Vec<usize> = (1..n).collect();
    let mut errors = Vec::with_capacity(n);
    for held in 0..n {
        if held > 0 {
            rows[held - 1] = held - 1;
        }
        let model = RidgeModel::fit_rows(columns, target, &rows, alpha)?;
        errors.push((target[held] - model.predict_row(columns, held)).powi(2));
    }
    let sse: f64 = errors.iter().sum();
    let mse = sse / n as f64;
    let sd = (errors.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    Ok(LoocvScore { r2: 1.0 - sse / sst, r2_stderr: (n as f64).sqrt() * sd / sst })
}

/// The grid penalty with the best leave-one-out R^2 (the smaller on ties).
pub fn select_alpha(columns: &[Vec<f64>], target: &[f64]) -> Result<(f64, f64)> {
    check_design(columns, target)?;
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for alpha in alpha_grid() {
        let r2 = loocv_r2_unchecked(columns, target, alpha)?;
        if r2 > best.1 {
            best = (alpha, r2);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    /// Mean drop in leave-one-out R^2 when the feature is shuffled.
    pub mean: f64,
    /// Population standard deviation of the drop over repeats.
    pub std: f64,
}

/// Permutation importance of every column: the drop in leave-one-out R^2 when
/// that column alone is shuffled, over `repeats` seeded shuffles. Column j
/// draws from stream j of `seed`.
pub fn permutation_importance(
    columns: &[Vec<f64>],
    target: &[f64],
    alpha: f64,
    repeats: usize,
    seed: u64,
) -> Result<Vec<Importance>> {
    check_design(columns, target)?;
    check_alpha(alpha)?;
    if repeats == 0 {
        return Err(Error::InvalidParameter("need at least one permutation repeat".into()));
    }
    let base = loocv_r2_unchecked(columns, target, alpha)?;
    let mut out = Vec::with_capacity(columns.len());
    let mut work = columns.to_vec();
    for j in 0..columns.len() {
        let mut rng = stream_rng(seed, j as u64);
        let mut drops = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            work[j].shuffle(&mut rng);
            drops.push(base - loocv_r2_unchecked(&work, target, alpha)?);
        }
        work[j].copy_from_slice(&columns[j]);
        let mean = drops.iter().sum::<f64>() / repeats as f64;
        let std = (drops.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / repeats as f64).sqrt();
        out.push(Importance { mean, std });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
    }

    #[test]
    fn small_alpha_recovers_ols() {
        let x1 = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let x2 = vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.5];
        let y: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 3.0 * a - 2.0 * b + 1.0).collect();
        let cols = vec![x1, x2];
        let m = RidgeModel::fit(&cols, &y, 1e-10).unwrap();
        for r in 0..6 {
            assert!((m.predict_row(&cols, r) - y[r]).abs() < 1e-6);
        }
        assert!(loocv_r2(&cols, &y, 1e-10).unwrap() > 1.0 - 1e-9);
    }

    #[test]
    fn heavy_penalty_shrinks_to_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cols = vec![noise(&mut rng, 10), noise(&mut rng, 10)];
        let y = noise(&mut rng, 10);
        let m = RidgeModel::fit(&cols, &y, 1e12).unwrap();
        assert!(m.coef.iter().all(|c| c.abs() < 1e-10));
        let imp = permutation_importance(&cols, &y, 1e12, 20, 0).unwrap();
        assert!(imp.iter().all(|i| i.mean.abs() < 1e-8 && i.std < 1e-8));
    }

    #[test]
    fn alpha_must_be_positive() {
        let cols = vec![vec![1.0, 2.0, 3.0, 4.0]];
        let y = vec![1.0, 2.0, 3.0, 5.0];
        assert!(matches!(RidgeModel::fit(&cols, &y, 0.0), Err(Error::InvalidParameter(_))));
        assert!(loocv_r2(&cols, &y, -1.0).is_err());
        assert!(loocv_r2(&cols, &[1.0; 4], 1.0).is_err());
        assert!(loocv_r2(&[vec![1.0, 2.0, 3.0]], &[1.0, 2.0, 3.0], 1.0).is_err());
    }

    #[test]
    fn true_feature_is_most_important() {
        let mut wins = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 20;
            let cols = vec![noise(&mut rng, n), noise(&mut rng, n), noise(&mut rng, n)];
            let y = cols[0].clone();
            let imp = permutation_importance(&cols, &y, 1e-6, 20, seed).unwrap();
            if imp[0].mean > imp[1].mean && imp[0].mean > imp[2].mean {
                wins += 1;
            }
        }
        assert!(wins >= 51, "{wins}");
    }

    #[test]
    fn null_feature_importance_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 25;
        let x0 = noise(&mut rng, n);
        let x1 = noise(&mut rng, n);
        let y: Vec<f64> = x0.iter().map(|v| 2.0 * v + 0.1 * (rng.random::<f64>() - 0.5)).collect();
        let imp = permutation_importance(&[x0, x1], &y, 0.1, 100, 9).unwrap();
        assert!(imp[1].mean.abs() <= 2.0 * imp[1].std.max(1e-12), "{:?}", imp[1]);
    }

    #[test]
    fn seeded_importance_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cols = vec![noise(&mut rng, 12), noise(&mut rng, 12)];
        let y: Vec<f64> = cols[0].iter().zip(&cols[1]).map(|(a, b)| a + 0.5 * b).collect();
        let a = permutation_importance(&cols, &y, 0.3, 30, 17).unwrap();
        let b = permutation_importance(&cols, &y, 0.3, 30, 17).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, permutation_importance(&cols, &y, 0.3, 30, 18).unwrap());
    }

    #[test]
    fn grid_spans_six_decades() {
        let g = alpha_grid();
        assert_eq!(g.len(), 25);
        assert!((g[0] - 1e-3).abs() < 1e-15 && (g[24] - 1e3).abs() < 1e-9);
    }
}
