use std::f64::consts::PI;

use statrs::distribution::{ContinuousCDF, Normal};

use super::TestOutcome;
use crate::error::{Error, Result};

const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const G: [f64; 2] = [-2.273, 0.459];

/// c[0] + c[1] x + c[2] x^2 + ...
fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Shapiro-Wilk W and p-value by Royston's approximation, for 3 <= n <= 5000.
pub fn shapiro_wilk(samples: &[f64]) -> Result<TestOutcome> {
    let n = samples.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::InvalidInput(format!("Shapiro-Wilk needs 3 to 5000 samples, got {n}")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite sample".into()));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if !(range > 0.0) {
        return Err(Error::Degenerate("all samples are equal".into()));
    }
    let half = n / 2;
    let nf = n as f64;
    let std_normal = Normal::standard();

    // Coefficients for the lower half; the upper half mirrors them.
    let mut a = vec![0.0; half];
    if n == 3 {
        a[0] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let m: Vec<f64> = (1..=half).map(|i| std_normal.inverse_cdf((i as f64 - 0.375) / (nf + 0.25))).collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / nf.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (first, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            a[1] = a2;
            (2, ((summ2 - 2.0 * (m[0] * m[0] + m[1] * m[1])) / (1.0 - 2.0 * (a1 * a1 + a2 * a2))).sqrt())
        } else {
            (1, ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt())
        };
        a[0] = a1;
        for i in first..half {
            a[i] = -m[i] / fac;
        }
    }

    let mean = x.iter().sum::<f64>() / nf;
    let ssq: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let num: f64 = (0..half).map(|i| a[i] * (x[n - 1 - i] - x[i])).sum();
    let w = (num * num / ssq).min(1.0);

    let p = if n == 3 {
        (6.0 / PI * (w.max(0.75).sqrt().asin() - PI / 3.0)).clamp(0.0, 1.0)
    } else {
        let y = (1.0 - w).ln();
        let (z, m, s) = if n <= 11 {
            let gamma = poly(&G, nf);
            if y >= gamma {
                return Ok(TestOutcome { statistic: w, p_value: 0.0 });
            }
            (-(gamma - y).ln(), poly(&C3, nf), poly(&C4, nf).exp())
        } else {
            let ln_n = nf.ln();
            (y, poly(&C5, ln_n), poly(&C6, ln_n).exp())
        };
        1.0 - std_normal.cdf((z - m) / s)
    };
    Ok(TestOutcome { statistic: w, p_value: p })
}
