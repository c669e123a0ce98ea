//! Treatment comparison (normality, rank tests, gamma fits) and correlation of
//! TLS density with microstructure metrics.

mod cluster;
mod correlation;
mod features;
mod gamma;
mod kruskal;
mod rank;
mod ridge;
mod samples;
mod shapiro;
mod special;

use serde::{Deserialize, Serialize};

pub use cluster::{ward_linkage, Dendrogram, Merge};
pub use correlation::{correlate, pearson, permutation_p_value, spearman, CorrelationKind};
pub use features::{
    cluster_features, morphology_design, ClusterOptions, CutRule, ridge_permutation_importance, ClusterSummary, FeatureCluster,
    FeatureClustering, FeatureImportance, MorphologyRecord, RegressionOptions, RegressionReport, ThresholdScore,
    FEATURE_NAMES,
};
pub use gamma::{gamma_fit, GammaFit};
pub use kruskal::kruskal_wallis;
pub use rank::average_ranks;
pub use ridge::{alpha_grid, loocv_r2, loocv_score, LoocvScore, permutation_importance, select_alpha, Importance, RidgeModel};
pub use samples::{compare_treatments, pool, DensitySampleSet, GammaRow, NormalityRow, PairwiseRow, TreatmentComparison};
pub use shapiro::shapiro_wilk;
pub use special::trigamma;

pub const DEFAULT_ALPHA: f64 = 0.05;

/// A test statistic with its p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
}

impl TestOutcome {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}
