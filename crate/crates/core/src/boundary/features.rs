use super::rag::RegionAdjacencyGraph;
use super::stats::MergeableStats;
use crate::error::Result;
use crate::features::{FeatureBank, FeatureInfo};

const SUMMARY_NAMES: [&str; 6] = ["mean", "std", "min", "q25", "median", "q75"];

/// Length of a boundary feature vector for `k` probability channels.
pub fn boundary_feature_dim(k: usize) -> usize {
    4 * 6 * k + 3
}

/// Feature vector of one boundary from its statistics and those of the two
/// regions it separates. The regions are put in a canonical order (smaller
/// first, ties by id) so the vector does not depend on which side is which.
pub fn feature_vector(
    boundary: &MergeableStats,
    contact: usize,
    a: (u32, usize, &MergeableStats),
    b: (u32, usize, &MergeableStats),
) -> Vec<f64> {
    let (first, second) = if (a.1, a.0) <= (b.1, b.0) { (a, b) } else { (b, a) };
    let s1 = first.2.summary();
    let s2 = second.2.summary();
    let mut out = boundary.summary();
    out.extend_from_slice(&s1);
    out.extend_from_slice(&s2);
    out.extend(s1.iter().zip(&s2).map(|(x, y)| (x - y).abs()));
    out.extend([contact as f64, first.1 as f64, second.1 as f64]);
    out
}

pub fn boundary_features(rag: &RegionAdjacencyGraph, id: usize) -> Vec<f64> {
    let b = rag.boundary(id);
    let ra = rag.region(b.a as usize);
    let rb = rag.region(b.b as usize);
    feature_vector(&b.stats, b.contact, (b.a, ra.size, &ra.stats), (b.b, rb.size, &rb.stats))
}

pub fn boundary_feature_names(k: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(boundary_feature_dim(k));
    for part in ["boundary", "region_small", "region_large", "region_diff"] {
        for c in 0..k {
            for s in SUMMARY_NAMES {
                names.push(format!("{part}.c{c}.{s}"));
            }
        }
    }
    names.extend(["contact".to_string(), "size_small".to_string(), "size_large".to_string()]);
    names
}

/// Features of every boundary, one row per boundary id.
pub fn boundary_feature_bank(rag: &RegionAdjacencyGraph) -> Result<FeatureBank> {
    let n = rag.boundary_count();
    let values: Vec<f64> = (0..n).flat_map(|id| boundary_features(rag, id)).collect();
    let info = boundary_feature_names(rag.k())
        .into_iter()
        .map(|name| FeatureInfo { name, scale: None })
        .collect();
    FeatureBank::new(n, info, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Dims, ProbabilityField, SegmentationMap};

    #[test]
    fn symmetric_regions_have_zero_differences() {
        let dims = Dims::planar(6, 3).unwrap();
        let ids: Vec<u32> = (0..18).map(|i| (i % 6 >= 3) as u32).collect();
        let p: Vec<f64> = (0..18).map(|i| [0.1, 0.5, 0.9, 0.9, 0.5, 0.1][i % 6]).collect();
        let field = ProbabilityField::from_membrane(dims, &p).unwrap();
        let rag = RegionAdjacencyGraph::build(&SegmentationMap::new(dims, ids).unwrap(), &field).unwrap();
        let f = boundary_features(&rag, 0);
        assert_eq!(f.len(), boundary_feature_dim(field.k()));
        let k = field.k();
        assert!(f[18 * k..24 * k].iter().all(|&d| d.abs() < 1e-12));
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dimension_for_four_classes() {
        assert_eq!(boundary_feature_dim(4), 99);
        assert_eq!(boundary_feature_names(4).len(), 99);
    }
}
