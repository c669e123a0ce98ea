use serde::{Deserialize, Serialize};

use super::axis::ResidualSeries;
use crate::error::{Error, Result};
use crate::fitting::savgol::savgol;

/// Events closer than this (in linewidths) are one defect.
pub const MERGE_RADIUS_KAPPA: f64 = 1.0;
const PEAK_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    /// Position on the shift axis (linewidths).
    pub shift_position: f64,
    /// Smoothed residual metric at the peak.
    pub peak_residual: f64,
    /// mA.
    pub bias_current: f64,
    /// GHz.
    pub frequency: f64,
}

/// Peaks of the smoothed residual series above `threshold`.
///
/// Each contiguous run of valid points is smoothed with a 5-point linear
/// Savitzky-Golay filter. A point is a peak when it exceeds the threshold and
/// the two neighbours on each side decrease strictly outwards. Peaks at most
/// one linewidth apart are merged, keeping the higher.
pub fn find_peaks(series: &ResidualSeries, threshold: f64) -> Result<Vec<DetectionEvent>> {
    let n = series.len();
    if n < PEAK_WINDOW {
        return Err(Error::InvalidInput(format!("series has {n} points, need at least {PEAK_WINDOW}")));
    }
    if series.residuals.len() != n || series.valid.len() != n {
        return Err(Error::InvalidInput("series columns differ in length".into()));
    }
    let mut smooth = vec![0.0; n];
    let mut start = 0;
    while start < n {
        if !series.valid[start] {
            start += 1;
            continue;
        }
        let end = (start..n).find(|&k| !series.valid[k]).unwrap_or(n);
        let s = savgol(&series.residuals[start..end], PEAK_WINDOW, 1)?;
        smooth[start..end].copy_from_slice(&s);
        start = end;
    }

    let half = PEAK_WINDOW / 2;
    let mut events: Vec<DetectionEvent> = Vec::new();
    for i in half..n - half {
        if !series.valid[i - half..=i + half].iter().all(|&v| v) {
            continue;
        }
        let w = &smooth[i - half..=i + half];
        if w[2] > threshold && w[0] < w[1] && w[1] < w[2] && w[2] > w[3] && w[3] > w[4] {
            let event = DetectionEvent {
                shift_position: series.shift_axis[i],
                peak_residual: w[2],
                bias_current: series.bias_current[i],
                frequency: series.frequency[i],
            };
            events.push(event);
        }
    }
    Ok(merge_close(events))
}

/// Collapse events within [`MERGE_RADIUS_KAPPA`] of the last kept one,
/// keeping the higher. Input is ordered along the axis.
fn merge_close(events: Vec<DetectionEvent>) -> Vec<DetectionEvent> {
    let mut out: Vec<DetectionEvent> = Vec::with_capacity(events.len());
    for event in events {
        match out.last_mut() {
            Some(last) if event.shift_position - last.shift_position <= MERGE_RADIUS_KAPPA + 1e-9 => {
                if event.peak_residual > last.peak_residual {
                    *last = event;
                }
            }
            _ => out.push(event),
        }
    }
    out
}
