use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One agglomeration step. Node ids follow the usual convention: leaves are
/// 0..n, the cluster created by merge k is n + k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: usize,
    pub merges: Vec<Merge>,
}

/// Ward linkage on a symmetric distance matrix, via the Lance-Williams update.
pub fn ward_linkage(dist: &[Vec<f64>]) -> Result<Dendrogram> {
    let n = dist.len();
    if n == 0 || dist.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidInput("distance matrix must be square and non-empty".into()));
    }
    if dist.iter().flatten().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::InvalidInput("distances must be finite and non-negative".into()));
    }
    let mut d: Vec<Vec<f64>> = dist.to_vec();
    let mut size = vec![1usize; n];
    let mut node: Vec<usize> = (0..n).collect();
    let mut active = vec![true; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    for step in 0..n.saturating_sub(1) {
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && d[i][j] < best.2 {
                    best = (i, j, d[i][j]);
                }
            }
        }
        let (i, j, dij) = best;
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let sk = size[k] as f64;
            let v = ((si + sk) * d[i][k].powi(2) + (sj + sk) * d[j][k].powi(2) - sk * dij * dij) / (si + sj + sk);
            let v = v.max(0.0).sqrt();
            d[i][k] = v;
            d[k][i] = v;
        }
        let (a, b) = (node[i].min(node[j]), node[i].max(node[j]));
        size[i] += size[j];
        merges.push(Merge { left: a, right: b, height: dij, size: size[i] });
        node[i] = n + step;
        active[j] = false;
    }
    Ok(Dendrogram { leaves: n, merges })
}

impl Dendrogram {
    /// Flat clusters from the merges with height strictly below `threshold`.
    /// Members are sorted, clusters ordered by their first member.
    pub fn cut(&self, threshold: f64) -> Vec<Vec<usize>> {
        let n = self.leaves;
        let mut parent: Vec<usize> = (0..n + self.merges.len()).collect();
        fn root(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (k, m) in self.merges.iter().enumerate() {
            if m.height < threshold {
                let id = n + k;
                let (a, b) = (root(&mut parent, m.left), root(&mut parent, m.right));
                parent[a] = id;
                parent[b] = id;
            }
        }
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for leaf in 0..n {
            let r = root(&mut parent, leaf);
            match groups.iter_mut().find(|(g, _)| *g == r) {
                Some((_, members)) => members.push(leaf),
                None => groups.push((r, vec![leaf])),
            }
        }
        groups.into_iter().map(|(_, m)| m).collect()
    }

    /// Thresholds giving every distinct flat clustering: zero, the midpoints
    /// between consecutive distinct heights, and one step above the top.
    pub fn candidate_thresholds(&self) -> Vec<f64> {
        let mut h: Vec<f64> = self.merges.iter().map(|m| m.height).collect();
        h.sort_by(f64::total_cmp);
        h.dedup();
        let mut out = vec![0.0];
        out.extend(h.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        if let Some(&top) = h.last() {
            out.push(top + top.max(1.0));
        }
        // A zero height leaves 0 and the first midpoint producing the same cut
        // only when every height is zero; keep the list distinct.
        out.dedup();
        out
    }
}
