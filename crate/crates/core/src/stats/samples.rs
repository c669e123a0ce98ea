use serde::{Deserialize, Serialize};

use super::gamma::{gamma_fit, GammaFit};
use super::kruskal::kruskal_wallis;
use super::shapiro::shapiro_wilk;
use crate::error::{Error, Result};

/// Per-resonator densities (/GHz/um^2) of one fabrication treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySampleSet {
    pub treatment_label: String,
    pub densities: Vec<f64>,
}

impl DensitySampleSet {
    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.densities.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(format!("{}: density {v} is not a non-negative number", self.treatment_label)));
        }
        Ok(())
    }
}

/// Pools treatments under a new label, e.g. two variants of one recipe.
pub fn pool(label: &str, sets: &[&DensitySampleSet]) -> DensitySampleSet {
    DensitySampleSet {
        treatment_label: label.to_string(),
        densities: sets.iter().flat_map(|s| s.densities.iter().copied()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityRow {
    pub treatment: String,
    pub n: usize,
    pub w: Option<f64>,
    pub p_value: Option<f64>,
    /// Normality rejected at the chosen alpha.
    pub rejected: Option<bool>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub first: String,
    pub second: String,
    pub h: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub treatment: String,
    pub fit: Option<GammaFit>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentComparison {
    pub alpha: f64,
    pub normality: Vec<NormalityRow>,
    pub pairwise: Vec<PairwiseRow>,
    pub gamma: Vec<GammaRow>,
    /// Tests that were skipped and why.
    pub notices: Vec<String>,
}

/// Shapiro-Wilk per treatment, pairwise Kruskal-Wallis and per-treatment gamma
/// fits. Tests a treatment is too small for are skipped with a notice rather
/// than failing the whole comparison.
pub fn compare_treatments(sets: &[DensitySampleSet], alpha: f64) -> Result<TreatmentComparison> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("significance level must be in (0, 1), got {alpha}")));
    }
    for s in sets {
        s.validate()?;
    }
    let mut notices = Vec::new();
    let mut normality = Vec::new();
    let mut gamma = Vec::new();
    for s in sets {
        let label = &s.treatment_label;
        normality.push(match shapiro_wilk(&s.densities) {
            Ok(t) => NormalityRow {
                treatment: label.clone(),
                n: s.densities.len(),
                w: Some(t.statistic),
                p_value: Some(t.p_value),
                rejected: Some(t.significant(alpha)),
                note: None,
            },
            Err(e) => {
                notices.push(format!("normality test skipped for {label}: {e}"));
                NormalityRow {
                    treatment: label.clone(),
                    n: s.densities.len(),
                    w: None,
                    p_value: None,
                    rejected: None,
                    note: Some(e.to_string()),
                }
            }
        });
        gamma.push(match gamma_fit(&s.densities) {
            Ok(fit) => GammaRow { treatment: label.clone(), fit: Some(fit), note: None },
            Err(e) => {
                notices.push(format!("gamma fit skipped for {label}: {e}"));
                GammaRow { treatment: label.clone(), fit: None, note: Some(e.to_string()) }
            }
        });
    }
    let mut pairwise = Vec::new();
    if sets.len() < 2 {
        notices.push("pairwise tests skipped: fewer than two treatments".into());
    }
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            let (a, b) = (&sets[i], &sets[j]);
            match kruskal_wallis(&[&a.densities, &b.densities]) {
                Ok(t) => pairwise.push(PairwiseRow {
                    first: a.treatment_label.clone(),
                    second: b.treatment_label.clone(),
                    h: t.statistic,
                    p_value: t.p_value,
                    significant: t.significant(alpha),
                }),
                Err(e) => notices.push(format!(
                    "rank test skipped for {} vs {}: {e}",
                    a.treatment_label, b.treatment_label
                )),
            }
        }
    }
    Ok(TreatmentComparison { alpha, normality, pairwise, gamma, notices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::DEFAULT_ALPHA;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma};

    fn set(label: &str, d: &[f64]) -> DensitySampleSet {
        DensitySampleSet { treatment_label: label.into(), densities: d.to_vec() }
    }

    #[test]
    fn separated_treatments_differ() {
        let a = set("A", &[0.21, 0.18, 0.30, 0.25, 0.12, 0.19, 0.27, 0.16]);
        let d = set("D", &[0.05, 0.09, 0.04, 0.08, 0.11, 0.06, 0.03, 0.07]);
        let r = compare_treatments(&[a, d], DEFAULT_ALPHA).unwrap();
        assert_eq!(r.pairwise.len(), 1);
        assert!(r.pairwise[0].significant);
        assert_eq!(r.normality.len(), 2);
        assert!(r.gamma.iter().all(|g| g.fit.is_some()));
        assert!(r.notices.is_empty());
    }

    #[test]
    fn same_distribution_is_not_significant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = Gamma::new(4.0, 0.05).unwrap();
        let mut draw = |label: &str| set(label, &(0..12).map(|_| g.sample(&mut rng)).collect::<Vec<_>>());
        let r = compare_treatments(&[draw("B"), draw("C")], DEFAULT_ALPHA).unwrap();
        assert!(r.pairwise[0].p_value > 0.05, "{}", r.pairwise[0].p_value);
    }

    #[test]
    fn single_treatment_skips_pairwise() {
        let r = compare_treatments(&[set("A", &[0.1, 0.2, 0.3, 0.25])], DEFAULT_ALPHA).unwrap();
        assert!(r.pairwise.is_empty());
        assert!(r.notices.iter().any(|n| n.contains("pairwise")));
    }

    #[test]
    fn small_treatments_are_noted() {
        let r = compare_treatments(&[set("A", &[0.1, 0.2]), set("B", &[0.3, 0.4, 0.5])], DEFAULT_ALPHA).unwrap();
        assert!(r.normality[0].w.is_none());
        assert!(r.gamma[0].fit.is_none() && r.gamma[1].fit.is_none());
        assert_eq!(r.pairwise.len(), 1);
    }

    #[test]
    fn pooling_and_validation() {
        let p = pool("A+A'", &[&set("A", &[0.1, 0.2]), &set("A'", &[0.3])]);
        assert_eq!(p.densities, vec![0.1, 0.2, 0.3]);
        assert!(compare_treatments(&[set("A", &[0.1, -0.2, 0.3])], DEFAULT_ALPHA).is_err());
        assert!(compare_treatments(&[p], 1.5).is_err());
    }
}
