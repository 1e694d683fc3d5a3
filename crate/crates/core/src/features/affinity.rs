use std::collections::HashSet;

use rayon::prelude::*;

use super::FeatureBank;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Diagonal feature covariance with a variance floor.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    variances: Vec<f64>,
}

impl CovarianceModel {
    pub const VARIANCE_FLOOR: f64 = 1e-8;

    pub fn new(variances: Vec<f64>) -> Self {
        let variances = variances.into_iter().map(|v| v.max(Self::VARIANCE_FLOOR)).collect();
        CovarianceModel { variances }
    }

    /// Per-column population variance of the bank.
    pub fn from_bank(bank: &FeatureBank) -> Self {
        let (_, std) = bank.column_moments();
        Self::new(std.into_iter().map(|s| s * s).collect())
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn dim(&self) -> usize {
        self.variances.len()
    }
}

/// `exp(-1/2 (a - b)^T S^-1 (a - b))` with diagonal `S`.
pub fn gaussian_affinity(a: &[f64], b: &[f64], cov: &CovarianceModel) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    debug_assert_eq!(a.len(), cov.dim());
    let m: f64 = a
        .iter()
        .zip(b)
        .zip(cov.variances())
        .map(|((x, y), var)| (x - y) * (x - y) / var)
        .sum();
    (-0.5 * m).exp()
}

/// Sparse symmetric similarity graph with cached degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    weights: CsrMatrix,
    degrees: Vec<f64>,
}

impl AffinityGraph {
    /// Builds an undirected graph from edges `(i, j, w)`; each edge is stored
    /// in both directions. Weights must lie in `(0, 1]`, self loops are
    /// rejected. Isolated nodes are allowed here.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut triplets = Vec::with_capacity(edges.len() * 2);
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument(format!("edge ({i},{j}) outside {n} nodes")));
            }
            if i == j {
                return Err(Error::InvalidArgument(format!("self loop at {i}")));
            }
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::InvalidArgument(format!("edge weight {w} outside (0, 1]")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::InvalidArgument(format!("duplicate edge ({i},{j})")));
            }
            triplets.push((i, j, w));
            triplets.push((j, i, w));
        }
        let weights = CsrMatrix::from_triplets(n, &triplets);
        let degrees = weights.row_sums();
        Ok(AffinityGraph { weights, degrees })
    }

    pub fn n(&self) -> usize {
        self.weights.n()
    }

    /// Stored nonzeros (each undirected edge counts twice).
    pub fn nnz(&self) -> usize {
        self.weights.nnz()
    }

    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.n() as f64 * self.n() as f64)
    }

    pub fn weights(&self) -> &CsrMatrix {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights.get(i, j)
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.row(i)
    }

    pub fn isolated_node(&self) -> Option<usize> {
        self.degrees.iter().position(|&d| !(d > 0.0))
    }

    /// Undirected edges `(i, j, w)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n())
            .flat_map(|i| self.neighbors(i).filter(move |&(j, _)| j > i).map(move |(j, w)| (i, j, w)))
            .collect()
    }
}

/// Ranked-neighbor sparsification: every node keeps its nearest neighbor,
/// then further neighbors are admitted rank by rank (strongest first within
/// a rank) until the symmetric nonzero count reaches
/// `target_density * n^2`. An edge is kept if either endpoint admits it.
/// Edges weaker than `similarity_floor` (or underflowing to zero) are then
/// dropped.
pub fn build_affinity_graph(
    bank: &FeatureBank,
    target_density: f64,
    similarity_floor: f64,
) -> Result<AffinityGraph> {
    if !(target_density > 0.0 && target_density <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target density {target_density} outside (0, 1]"
        )));
    }
    let n = bank.n();
    if n < 2 {
        return Err(Error::Empty("affinity graph needs at least two samples".into()));
    }
    let cov = CovarianceModel::from_bank(bank);
    let d = bank.d();
    let scaled: Vec<f64> = bank
        .values()
        .iter()
        .enumerate()
        .map(|(k, v)| v / cov.variances()[k % d].sqrt())
        .collect();
    let row = |i: usize| &scaled[i * d..(i + 1) * d];

    let target_nnz = (target_density * (n * n) as f64).round() as usize;
    let per_node = ((target_density * n as f64).ceil() as usize + 1).clamp(1, n - 1);

    // per-node nearest neighbors by squared Mahalanobis distance
    let ranked: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = row(i);
            let mut dists: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let dist = a.iter().zip(row(j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
                    (j, dist)
                })
                .collect();
            let by_dist = |p: &(usize, f64), q: &(usize, f64)| p.1.total_cmp(&q.1).then(p.0.cmp(&q.0));
            if per_node < dists.len() {
                dists.select_nth_unstable_by(per_node, by_dist);
                dists.truncate(per_node);
            }
            dists.sort_by(by_dist);
            dists
        })
        .collect();

    let mut admitted: HashSet<(usize, usize)> = HashSet::new();
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for rank in 0..per_node {
        let mut candidates: Vec<(usize, usize, f64)> = ranked
            .iter()
            .enumerate()
            .filter_map(|(i, list)| list.get(rank).map(|&(j, dist)| (i, j, dist)))
            .collect();
        candidates.sort_by(|p, q| p.2.total_cmp(&q.2).then(p.0.cmp(&q.0)));
        for (i, j, dist) in candidates {
            if rank > 0 && 2 * admitted.len() >= target_nnz {
                break;
            }
            if admitted.insert((i.min(j), i.max(j))) {
                edges.push((i.min(j), i.max(j), (-0.5 * dist).exp()));
            }
        }
        if 2 * admitted.len() >= target_nnz {
            break;
        }
    }

    edges.retain(|&(_, _, w)| w > 0.0 && w >= similarity_floor);
    edges.sort_by_key(|&(i, j, _)| (i, j));
    let graph = AffinityGraph::from_edges(n, &edges)?;
    if let Some(node) = graph.isolated_node() {
        return Err(Error::IsolatedNode { node });
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affinity_of_identical_vectors_is_one() {
        let cov = CovarianceModel::new(vec![1.0, 2.0]);
        assert_eq!(gaussian_affinity(&[0.3, 4.0], &[0.3, 4.0], &cov), 1.0);
    }

    #[test]
    fn affinity_at_distance_two() {
        // exp(-1/2 * 2^2 / 1) = e^-2
        let cov = CovarianceModel::new(vec![1.0]);
        let w = gaussian_affinity(&[0.0], &[2.0], &cov);
        assert!((w - 0.1353352832366127).abs() < 1e-15, "{w}");
    }

    #[test]
    fn affinity_vanishes_far_away() {
        let cov = CovarianceModel::new(vec![1.0]);
        assert!(gaussian_affinity(&[0.0], &[1e3], &cov) < 1e-300);
    }

    #[test]
    fn variance_floor_applies() {
        let cov = CovarianceModel::new(vec![0.0, -1.0, 3.0]);
        assert_eq!(cov.variances(), &[1e-8, 1e-8, 3.0]);
    }

    #[test]
    fn identical_samples_form_complete_triangle() {
        let bank = FeatureBank::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let g = build_affinity_graph(&bank, 1.0, 0.0).unwrap();
        assert_eq!(g.nnz(), 6);
        for (i, j, w) in g.edges() {
            assert_eq!(w, 1.0, "edge {i}-{j}");
        }
    }

    #[test]
    fn density_target_is_hit_on_random_bank() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> =
            (0..1000).map(|_| (0..5).map(|_| rng.random::<f64>()).collect()).collect();
        let bank = FeatureBank::from_rows(&rows).unwrap();
        let g = build_affinity_graph(&bank, 0.005, 0.0).unwrap();
        let target = 0.005 * 1e6;
        let nnz = g.nnz() as f64;
        assert!((nnz - target).abs() <= 0.2 * target, "nnz {nnz} vs {target}");
        assert!(g.weights().is_symmetric(0.0));
        assert!(g.isolated_node().is_none());
    }

    #[test]
    fn floor_above_all_similarities_isolates_nodes() {
        let bank = FeatureBank::from_rows(&[vec![0.0], vec![1.0], vec![5.0]]).unwrap();
        let err = build_affinity_graph(&bank, 1.0, 1.1).unwrap_err();
        assert!(matches!(err, Error::IsolatedNode { .. }), "{err}");
    }

    #[test]
    fn rejects_bad_density() {
        let bank = FeatureBank::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(build_affinity_graph(&bank, 0.0, 0.0).is_err());
        assert!(build_affinity_graph(&bank, 1.5, 0.0).is_err());
    }
}
