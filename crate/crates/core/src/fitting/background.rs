use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::savgol::{gradient, moving_variance, savgol};
use super::trace::Trace;
use crate::error::{Error, Result};

/// Fraction of the variance excursion above baseline that still counts as resonance.
const REGION_FRACTION: f64 = 0.1;
/// The variance peak must exceed this multiple of its median to count as a resonance.
const MIN_CONTRAST: f64 = 5.0;

/// Partition of a trace into the resonance region and the background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackgroundSplit {
    pub resonance_mask: Vec<bool>,
    pub background_mask: Vec<bool>,
}

impl BackgroundSplit {
    fn from_range(n: usize, range: Range<usize>) -> Self {
        let resonance_mask: Vec<bool> = (0..n).map(|i| range.contains(&i)).collect();
        let background_mask = resonance_mask.iter().map(|r| !r).collect();
        Self { resonance_mask, background_mask }
    }

    /// Index range of the contiguous resonance region.
    pub fn resonance_range(&self) -> Range<usize> {
        let start = self.resonance_mask.iter().position(|&r| r).unwrap_or(0);
        let end = self.resonance_mask.iter().rposition(|&r| r).map_or(start, |e| e + 1);
        start..end
    }

    pub fn background_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.background_mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }
}

/// Default smoothing window: max(11, n/20), forced odd.
pub fn default_window(n: usize) -> usize {
    let w = (n / 20).max(11);
    if w % 2 == 0 {
        w + 1
    } else {
        w
    }
}

/// Locate the resonance by where the smoothed |S21| varies most.
///
/// |S21| is smoothed, differentiated, turned into a moving-window variance and
/// smoothed again; the contiguous region around the variance maximum that stays
/// above a tenth of the peak excursion is the resonance.
pub fn background_split(trace: &Trace) -> Result<BackgroundSplit> {
    trace.validate()?;
    let n = trace.len();
    let window = default_window(n);
    let mag = trace.magnitudes();
    let smooth = savgol(&mag, window, 2)?;
    let var = moving_variance(&gradient(&smooth), window);
    let profile: Vec<f64> = savgol(&var, window, 2)?.into_iter().map(|v| v.max(0.0)).collect();

    let (peak, &max) = profile
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("trace is non-empty");
    let mut sorted = profile.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[n / 2];
    let scale = mag.iter().sum::<f64>() / n as f64;
    let floor = 1e-20 * scale * scale;
    if max <= floor || max <= MIN_CONTRAST * median {
        return Err(Error::NoResonance(format!(
            "variance profile is flat (peak {max:.3e}, median {median:.3e})"
        )));
    }

    let cut = median + REGION_FRACTION * (max - median);
    let mut start = peak;
    while start > 0 && profile[start - 1] > cut {
        start -= 1;
    }
    let mut end = peak + 1;
    while end < n && profile[end] > cut {
        end += 1;
    }
    Ok(BackgroundSplit::from_range(n, start..end))
}
