use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Per-trace base error rates and the per-bin rates of the five-point peak detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorRates {
    /// Chance a TLS-free residual lies above threshold.
    pub fp: f64,
    /// Chance a TLS-coupled residual lies below threshold.
    pub fn_: f64,
    /// Per-bin false-positive rate.
    #[serde(rename = "FP")]
    pub false_pos: f64,
    /// Per-bin false-negative rate.
    #[serde(rename = "FN")]
    pub false_neg: f64,
}

impl DetectorRates {
    /// Per-bin rates supplied directly, with base rates left unknown (NaN).
    pub fn from_bin_rates(false_pos: f64, false_neg: f64) -> Result<Self> {
        for (name, v) in [("FP", false_pos), ("FN", false_neg)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(Self { fp: f64::NAN, fn_: f64::NAN, false_pos, false_neg })
    }
}

/// Fold the five-point peak requirement into per-bin rates.
///
/// A spurious peak needs at least one of five values above threshold
/// (1 - (1-fp)^5) arranged as a symmetric peak (6 of 5! orderings):
/// FP = (1 - (1-fp)^5) / 20. A true TLS is missed only if all five values fall
/// below threshold: FN = fn^5.
pub fn true_rates(fp: f64, fn_: f64) -> Result<DetectorRates> {
    for (name, v) in [("fp", fp), ("fn", fn_)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(invalid(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    Ok(DetectorRates {
        fp,
        fn_,
        false_pos: (1.0 - (1.0 - fp).powi(5)) / 20.0,
        false_neg: fn_.powi(5),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn limits() {
        let r = true_rates(0.0, 0.0).unwrap();
        assert_eq!((r.false_pos, r.false_neg), (0.0, 0.0));
        let r = true_rates(1.0, 1.0).unwrap();
        assert_eq!((r.false_pos, r.false_neg), (0.05, 1.0));
    }

    #[test]
    fn worked_value() {
        let r = true_rates(0.1, 0.5).unwrap();
        assert!((r.false_pos - 0.020_475_5).abs() < 1e-9);
        assert_eq!(r.false_neg, 0.03125);
    }

    #[test]
    fn out_of_range() {
        assert!(true_rates(-0.1, 0.0).is_err());
        assert!(true_rates(0.0, 1.5).is_err());
        assert!(true_rates(f64::NAN, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn bounded(fp in 0.0f64..=1.0, fn_ in 0.0f64..=1.0) {
            let r = true_rates(fp, fn_).unwrap();
            prop_assert!(r.false_pos <= 0.05 + 1e-15);
            prop_assert!(r.false_neg <= fn_);
            prop_assert!(r.false_pos >= 0.0 && r.false_neg >= 0.0);
        }
    }
}
