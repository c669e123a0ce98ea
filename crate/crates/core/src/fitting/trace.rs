use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of samples in a usable trace.
pub const MIN_TRACE_POINTS: usize = 16;

/// One complex transmission sweep at a fixed flux bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// Strictly increasing probe frequencies (GHz).
    pub freqs: Vec<f64>,
    pub s21: Vec<Complex64>,
    /// Bias current (mA).
    pub bias_current: f64,
}

impl Trace {
    pub fn new(freqs: Vec<f64>, s21: Vec<Complex64>, bias_current: f64) -> Result<Self> {
        let trace = Self { freqs, s21, bias_current };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.freqs.len() != self.s21.len() {
            return Err(Error::InvalidInput(format!(
                "trace has {} frequencies but {} samples",
                self.freqs.len(),
                self.s21.len()
            )));
        }
        if self.freqs.len() < MIN_TRACE_POINTS {
            return Err(Error::InvalidInput(format!(
                "trace needs at least {MIN_TRACE_POINTS} points, got {}",
                self.freqs.len()
            )));
        }
        validate_grid(&self.freqs)?;
        if self.s21.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("non-finite S21 sample".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.s21.iter().map(|z| z.norm()).collect()
    }
}

pub(crate) fn validate_grid(freqs: &[f64]) -> Result<()> {
    if freqs.is_empty() {
        return Err(Error::InvalidInput("empty frequency grid".into()));
    }
    if freqs.iter().any(|f| !f.is_finite()) {
        return Err(Error::InvalidInput("non-finite frequency".into()));
    }
    if freqs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("frequency grid must be strictly increasing".into()));
    }
    Ok(())
}

/// `n` evenly spaced points covering `[center - span/2, center + span/2]`.
pub fn linear_grid(center: f64, span: f64, n: usize) -> Vec<f64> {
    let start = center - span / 2.0;
    let step = span / (n as f64 - 1.0);
    (0..n).map(|k| start + step * k as f64).collect()
}
