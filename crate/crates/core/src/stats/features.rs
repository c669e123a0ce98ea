use serde::{Deserialize, Serialize};

use super::cluster::ward_linkage;
use super::correlation::{pearson, spearman};
use super::ridge::{check_design, loocv_score, permutation_importance, select_alpha, Importance};
use crate::error::{Error, Result};

/// Microstructure metrics of one device (nm) with its measured TLS density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphologyRecord {
    pub device_label: String,
    pub electrode_thickness_mean: f64,
    pub electrode_thickness_std: f64,
    pub electrode_thickness_rms: f64,
    pub grain_width_mean: f64,
    pub grain_width_std: f64,
    pub junction_thickness_mean: f64,
    pub junction_thickness_std: f64,
    pub junction_thickness_rms: f64,
    /// /GHz/um^2.
    pub tls_density: f64,
}

pub const FEATURE_NAMES: [&str; 8] = [
    "electrode_thickness_mean",
    "electrode_thickness_std",
    "electrode_thickness_rms",
    "grain_width_mean",
    "grain_width_std",
    "junction_thickness_mean",
    "junction_thickness_std",
    "junction_thickness_rms",
];

impl MorphologyRecord {
    pub fn features(&self) -> [f64; 8] {
        [
            self.electrode_thickness_mean,
            self.electrode_thickness_std,
            self.electrode_thickness_rms,
            self.grain_width_mean,
            self.grain_width_std,
            self.junction_thickness_mean,
            self.junction_thickness_std,
            self.junction_thickness_rms,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.features().iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(format!("{}: {} must be positive", self.device_label, FEATURE_NAMES[i])));
        }
        if !(self.tls_density >= 0.0) || !self.tls_density.is_finite() {
            return Err(Error::InvalidInput(format!("{}: tls_density must be non-negative", self.device_label)));
        }
        Ok(())
    }
}

/// Feature columns and target vector of a set of records.
pub fn morphology_design(records: &[MorphologyRecord]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    for r in records {
        r.validate()?;
    }
    let columns = (0..FEATURE_NAMES.len()).map(|j| records.iter().map(|r| r.features()[j]).collect()).collect();
    Ok((columns, records.iter().map(|r| r.tls_density).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCluster {
    /// Column indices, ascending.
    pub members: Vec<usize>,
    /// Member most strongly rank-correlated with the target.
    pub representative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScore {
    pub threshold: f64,
    pub n_clusters: usize,
    pub ridge_alpha: f64,
    pub loocv_r2: f64,
    pub loocv_r2_stderr: f64,
}

/// How the dendrogram cut is chosen from the scored candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutRule {
    /// Highest leave-one-out R^2.
    #[default]
    MaxScore,
    /// Fewest clusters whose R^2 is within one standard error of the best.
    OneStandardError,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClusterOptions {
    /// Fixed ridge penalty; chosen per cut by leave-one-out when unset.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub rule: CutRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureClustering {
    pub clusters: Vec<FeatureCluster>,
    pub threshold: f64,
    pub ridge_alpha: f64,
    pub loocv_r2: f64,
    /// Every candidate cut that was scored.
    pub scores: Vec<ThresholdScore>,
}

impl FeatureClustering {
    pub fn representatives(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.representative).collect()
    }
}

/// Penalty and score for a design: the fixed penalty, or the best on the grid.
fn score(columns: &[Vec<f64>], target: &[f64], alpha: Option<f64>) -> Result<(f64, f64, f64)> {
    let alpha = match alpha {
        Some(a) => a,
        None => select_alpha(columns, target)?.0,
    };
    let s = loocv_score(columns, target, alpha)?;
    Ok((alpha, s.r2, s.r2_stderr))
}

/// Groups features by Ward clustering on 1 - |Spearman rho| and picks the cut
/// whose representatives give the best leave-one-out ridge R^2.
///
/// Each cluster is represented by its member with the largest |rho| against
/// the target (ties broken by |Pearson r|). Equal scores favour fewer clusters.
///
/// Rank correlations of short columns tie often, and tied linkage distances
/// make Ward order-dependent. Columns are therefore processed in a canonical
/// order (lexicographic by value), which makes the result independent of the
/// input column order.
pub fn cluster_features(columns: &[Vec<f64>], target: &[f64], opts: &ClusterOptions) -> Result<FeatureClustering> {
    check_design(columns, target)?;
    let p = columns.len();
    if p < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 features, got {p}")));
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        columns[a].iter().zip(&columns[b]).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(a.cmp(&b))
    });
    let canonical: Vec<Vec<f64>> = order.iter().map(|&j| columns[j].clone()).collect();
    let mut out = cluster_canonical(&canonical, target, opts)?;
    for c in &mut out.clusters {
        c.representative = order[c.representative];
        for m in &mut c.members {
            *m = order[*m];
        }
        c.members.sort_unstable();
    }
    out.clusters.sort_by_key(|c| c.members[0]);
    Ok(out)
}

fn cluster_canonical(columns: &[Vec<f64>], target: &[f64], opts: &ClusterOptions) -> Result<FeatureClustering> {
    let p = columns.len();
    let mut dist = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in i + 1..p {
            let rho = spearman(&columns[i], &columns[j])
                .map_err(|e| Error::InvalidInput(format!("feature {i} or {j}: {e}")))?
                .statistic;
            dist[i][j] = 1.0 - rho.abs();
            dist[j][i] = dist[i][j];
        }
    }
    let strength: Vec<(f64, f64)> = columns
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let rho = spearman(c, target).map_err(|e| Error::InvalidInput(format!("feature {j}: {e}")))?;
            Ok((rho.statistic.abs(), pearson(c, target)?.statistic.abs()))
        })
        .collect::<Result<_>>()?;
    let dendrogram = ward_linkage(&dist)?;

    let mut candidates: Vec<(Vec<FeatureCluster>, ThresholdScore)> = Vec::new();
    for threshold in dendrogram.candidate_thresholds() {
        let clusters: Vec<FeatureCluster> = dendrogram
            .cut(threshold)
            .into_iter()
            .map(|members| {
                let representative = *members
                    .iter()
                    .reduce(|a, b| if strength[*b].partial_cmp(&strength[*a]).unwrap().is_gt() { b } else { a })
                    .expect("non-empty");
                FeatureCluster { members, representative }
            })
            .collect();
        let reps: Vec<Vec<f64>> = clusters.iter().map(|c| columns[c.representative].clone()).collect();
        let (ridge_alpha, r2, se) = score(&reps, target, opts.alpha)?;
        let s = ThresholdScore { threshold, n_clusters: clusters.len(), ridge_alpha, loocv_r2: r2, loocv_r2_stderr: se };
        candidates.push((clusters, s));
    }

    let top = candidates
        .iter()
        .map(|(_, s)| *s)
        .reduce(|a, b| {
            let tol = 1e-12 * a.loocv_r2.abs().max(1.0);
            if b.loocv_r2 > a.loocv_r2 + tol || (b.loocv_r2 >= a.loocv_r2 - tol && b.n_clusters < a.n_clusters) {
                b
            } else {
                a
            }
        })
        .expect("at least one candidate threshold");
    let floor = match opts.rule {
        CutRule::MaxScore => top.loocv_r2 - 1e-12 * top.loocv_r2.abs().max(1.0),
        CutRule::OneStandardError => top.loocv_r2 - top.loocv_r2_stderr,
    };
    let scores: Vec<ThresholdScore> = candidates.iter().map(|(_, s)| *s).collect();
    let (clusters, chosen) = candidates
        .into_iter()
        .filter(|(_, s)| s.loocv_r2 >= floor)
        .min_by_key(|(_, s)| s.n_clusters)
        .expect("the best candidate passes its own floor");
    Ok(FeatureClustering {
        clusters,
        threshold: chosen.threshold,
        ridge_alpha: chosen.ridge_alpha,
        loocv_r2: chosen.loocv_r2,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub members: Vec<String>,
    pub representative: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub feature_clusters: Vec<ClusterSummary>,
    pub threshold: f64,
    pub ridge_alpha: f64,
    pub loocv_r2: f64,
    /// One entry per representative, highest mean first.
    pub importances: Vec<FeatureImportance>,
    pub scores: Vec<ThresholdScore>,
}

impl RegressionReport {
    pub fn top_feature(&self) -> &str {
        &self.importances[0].feature
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionOptions {
    #[serde(flatten)]
    pub cluster: ClusterOptions,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for RegressionOptions {
    fn default() -> Self {
        RegressionOptions { cluster: ClusterOptions::default(), repeats: 100, seed: 0 }
    }
}

/// Clustering, ridge fit on the representatives, and permutation importance
/// of each representative, with features labelled by `names`.
pub fn ridge_permutation_importance(
    names: &[String],
    columns: &[Vec<f64>],
    target: &[f64],
    opts: &RegressionOptions,
) -> Result<RegressionReport> {
    if names.len() != columns.len() {
        return Err(Error::InvalidInput(format!("{} names for {} features", names.len(), columns.len())));
    }
    let clustering = cluster_features(columns, target, &opts.cluster)?;
    let reps: Vec<Vec<f64>> = clustering.representatives().iter().map(|&j| columns[j].clone()).collect();
    let imp: Vec<Importance> = permutation_importance(&reps, target, clustering.ridge_alpha, opts.repeats, opts.seed)?;
    let mut importances: Vec<FeatureImportance> = clustering
        .clusters
        .iter()
        .zip(imp)
        .map(|(c, i)| FeatureImportance { feature: names[c.representative].clone(), mean: i.mean, std: i.std })
        .collect();
    importances.sort_by(|a, b| b.mean.total_cmp(&a.mean));
    Ok(RegressionReport {
        feature_clusters: clustering
            .clusters
            .iter()
            .map(|c| ClusterSummary {
                members: c.members.iter().map(|&j| names[j].clone()).collect(),
                representative: names[c.representative].clone(),
            })
            .collect(),
        threshold: clustering.threshold,
        ridge_alpha: clustering.ridge_alpha,
        loocv_r2: clustering.loocv_r2,
        importances,
        scores: clustering.scores,
    })
}
