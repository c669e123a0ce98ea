//! Savitzky-Golay smoothing with polynomial fits over the end windows.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Projection matrix `V (V^T V)^-1 V^T` for a window of `window` samples;
/// row `r` holds the weights that evaluate the local fit at position `r`.
fn projection(window: usize, order: usize) -> DMatrix<f64> {
    let half = (window / 2) as f64;
    let v = DMatrix::from_fn(window, order + 1, |r, c| (r as f64 - half).powi(c as i32));
    let vtv = v.transpose() * &v;
    let inv = vtv.try_inverse().expect("Vandermonde normal matrix is invertible for order < window");
    &v * inv * v.transpose()
}

/// Smooth `data` with a `window`-point, `order`-degree Savitzky-Golay filter.
///
/// A window longer than the data is shrunk to the largest odd length that fits.
pub fn savgol(data: &[f64], window: usize, order: usize) -> Result<Vec<f64>> {
    if window % 2 == 0 || window == 0 {
        return Err(invalid(format!("window must be odd, got {window}")));
    }
    let n = data.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut window = window.min(if n % 2 == 1 { n } else { n - 1 });
    if window <= order {
        // Too short to smooth at this order; the fit reproduces the data.
        window = 1;
    }
    if window == 1 {
        return Ok(data.to_vec());
    }
    let proj = projection(window, order);
    let half = window / 2;
    let centre = proj.row(half);
    let mut out = vec![0.0; n];
    for i in half..n - half {
        out[i] = (0..window).map(|k| centre[k] * data[i - half + k]).sum();
    }
    for i in 0..half {
        let row = proj.row(i);
        out[i] = (0..window).map(|k| row[k] * data[k]).sum();
        let row = proj.row(window - 1 - i);
        let base = n - window;
        out[n - 1 - i] = (0..window).map(|k| row[k] * data[base + k]).sum();
    }
    Ok(out)
}

/// Derivative with unit sample spacing: central differences inside,
/// one-sided at the ends.
pub fn gradient(data: &[f64]) -> Vec<f64> {
    let n = data.len();
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n)
            .map(|i| match i {
                0 => data[1] - data[0],
                i if i == n - 1 => data[n - 1] - data[n - 2],
                i => 0.5 * (data[i + 1] - data[i - 1]),
            })
            .collect(),
    }
}

/// Population variance over a centred window, truncated at the edges.
pub fn moving_variance(data: &[f64], window: usize) -> Vec<f64> {
    let n = data.len();
    let half = window / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let slice = &data[lo..hi];
            let m = slice.iter().sum::<f64>() / slice.len() as f64;
            slice.iter().map(|x| (x - m).powi(2)).sum::<f64>() / slice.len() as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_polynomials_of_its_order() {
        let data: Vec<f64> = (0..40).map(|i| 0.5 - 0.2 * i as f64 + 0.03 * (i * i) as f64).collect();
        let out = savgol(&data, 11, 2).unwrap();
        for (a, b) in data.iter().zip(&out) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn order_one_window_five_is_moving_average_inside() {
        let data = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0, 3.0];
        let out = savgol(&data, 5, 1).unwrap();
        for i in 2..5 {
            let avg = data[i - 2..=i + 2].iter().sum::<f64>() / 5.0;
            assert!((out[i] - avg).abs() < 1e-12);
        }
    }

    #[test]
    fn reduces_white_noise() {
        let data: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let out = savgol(&data, 21, 2).unwrap();
        let rms = (out[20..980].iter().map(|x| x * x).sum::<f64>() / 960.0).sqrt();
        assert!(rms < 0.2);
    }

    #[test]
    fn rejects_even_window() {
        assert!(savgol(&[1.0, 2.0, 3.0], 4, 1).is_err());
    }

    #[test]
    fn short_input_shrinks_window() {
        let out = savgol(&[1.0, 2.0, 3.0, 4.0], 11, 2).unwrap();
        assert_eq!(out.len(), 4);
        assert!((out[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_and_variance() {
        assert_eq!(gradient(&[0.0, 1.0, 4.0]), vec![1.0, 2.0, 3.0]);
        let v = moving_variance(&[1.0, 1.0, 1.0, 5.0], 3);
        assert_eq!(v[0], 0.0);
        assert!((v[2] - 32.0 / 9.0).abs() < 1e-12);
    }
}
