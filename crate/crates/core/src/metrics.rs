//! Segmentation error measures against groundtruth: split variation of
//! information, split Rand error and the Rand F-score.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SegmentationMap;

/// Voxel overlap counts between a groundtruth map (rows) and a candidate
/// segmentation (columns).
#[derive(Debug, Clone)]
pub struct ContingencyTable {
    pub n: u64,
    /// `(gt, sg) -> count`, only nonzero cells.
    pub cells: HashMap<(u32, u32), u64>,
    pub gt_sizes: Vec<u64>,
    pub sg_sizes: Vec<u64>,
}

impl ContingencyTable {
    pub fn new(gt: &SegmentationMap, sg: &SegmentationMap) -> Result<Self> {
        if gt.dims() != sg.dims() {
            return Err(Error::DimensionMismatch(format!("groundtruth {:?} vs segmentation {:?}", gt.dims(), sg.dims())));
        }
        if gt.is_empty() {
            return Err(Error::Empty("segmentation".into()));
        }
        let mut cells = HashMap::new();
        let mut gt_sizes = vec![0u64; gt.region_count()];
        let mut sg_sizes = vec![0u64; sg.region_count()];
        for (&a, &b) in gt.ids().iter().zip(sg.ids()) {
            *cells.entry((a, b)).or_insert(0) += 1;
            gt_sizes[a as usize] += 1;
            sg_sizes[b as usize] += 1;
        }
        Ok(ContingencyTable { n: gt.len() as u64, cells, gt_sizes, sg_sizes })
    }
}

/// Over- and under-segmentation parts of an error measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub over: f64,
    pub under: f64,
}

impl SplitScore {
    pub fn total(&self) -> f64 {
        self.over + self.under
    }
}

/// `under = H(GT|SG)` (groundtruth bodies mixed inside one region) and
/// `over = H(SG|GT)` (bodies split across regions), in bits.
pub fn split_vi(gt: &SegmentationMap, sg: &SegmentationMap) -> Result<SplitScore> {
    let t = ContingencyTable::new(gt, sg)?;
    let n = t.n as f64;
    let (mut over, mut under) = (0.0, 0.0);
    for (&(a, b), &c) in &t.cells {
        let p = c as f64 / n;
        under -= p * (c as f64 / t.sg_sizes[b as usize] as f64).log2();
        over -= p * (c as f64 / t.gt_sizes[a as usize] as f64).log2();
    }
    Ok(SplitScore { over: over.max(0.0), under: under.max(0.0) })
}

fn pairs(c: u64) -> u128 {
    let c = c as u128;
    c * c.saturating_sub(1) / 2
}

/// Fractions of all voxel pairs that are together in the groundtruth but
/// apart in the segmentation (`over`) and the reverse (`under`).
pub fn split_rand(gt: &SegmentationMap, sg: &SegmentationMap) -> Result<SplitScore> {
    let t = ContingencyTable::new(gt, sg)?;
    if t.n < 2 {
        return Err(Error::InvalidArgument("split Rand error needs at least 2 voxels".into()));
    }
    let both: u128 = t.cells.values().map(|&c| pairs(c)).sum();
    let same_gt: u128 = t.gt_sizes.iter().map(|&c| pairs(c)).sum();
    let same_sg: u128 = t.sg_sizes.iter().map(|&c| pairs(c)).sum();
    let total = pairs(t.n) as f64;
    Ok(SplitScore { over: (same_gt - both) as f64 / total, under: (same_sg - both) as f64 / total })
}

/// Rand F-score on same-cluster pairs, counted as ordered pairs including
/// each voxel with itself (sums of squared overlaps).
pub fn rand_f_score(gt: &SegmentationMap, sg: &SegmentationMap) -> Result<f64> {
    let t = ContingencyTable::new(gt, sg)?;
    if t.n < 2 {
        return Err(Error::InvalidArgument("Rand F-score needs at least 2 voxels".into()));
    }
    let sq = |c: &u64| (*c as u128) * (*c as u128);
    let both: u128 = t.cells.values().map(sq).sum();
    let gt_sq: u128 = t.gt_sizes.iter().map(sq).sum();
    let sg_sq: u128 = t.sg_sizes.iter().map(sq).sum();
    let precision = both as f64 / sg_sq as f64;
    let recall = both as f64 / gt_sq as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// All three measures, in the shape the `evaluate` command prints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub vi: SplitScore,
    pub rand: SplitScore,
    pub rand_f: f64,
}

pub fn evaluate(gt: &SegmentationMap, sg: &SegmentationMap) -> Result<Evaluation> {
    Ok(Evaluation { vi: split_vi(gt, sg)?, rand: split_rand(gt, sg)?, rand_f: rand_f_score(gt, sg)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Dims;
    use proptest::prelude::*;

    fn map(ids: &[u64]) -> SegmentationMap {
        SegmentationMap::from_arbitrary_ids(Dims::new(ids.len(), 1, 1).unwrap(), ids).unwrap()
    }

    // brute force over voxel pairs
    fn pair_oracle(a: &[u64], b: &[u64]) -> (f64, f64, f64) {
        let n = a.len();
        let (mut over, mut under) = (0u64, 0u64);
        for i in 0..n {
            for j in i + 1..n {
                let sa = a[i] == a[j];
                let sb = b[i] == b[j];
                over += (sa && !sb) as u64;
                under += (!sa && sb) as u64;
            }
        }
        let total = (n * (n - 1) / 2) as f64;
        let (mut both, mut sa, mut sb) = (0u64, 0u64, 0u64);
        for i in 0..n {
            for j in 0..n {
                sa += (a[i] == a[j]) as u64;
                sb += (b[i] == b[j]) as u64;
                both += (a[i] == a[j] && b[i] == b[j]) as u64;
            }
        }
        let p = both as f64 / sb as f64;
        let r = both as f64 / sa as f64;
        (over as f64 / total, under as f64 / total, 2.0 * p * r / (p + r))
    }

    // H(X|Y) straight from the definition
    fn conditional_entropy(x: &[u64], y: &[u64]) -> f64 {
        let n = x.len() as f64;
        let mut h = 0.0;
        let mut ys: Vec<u64> = y.to_vec();
        ys.sort();
        ys.dedup();
        for &yv in &ys {
            let in_y: Vec<u64> = x.iter().zip(y).filter(|(_, &b)| b == yv).map(|(&a, _)| a).collect();
            let py = in_y.len() as f64 / n;
            let mut xs = in_y.clone();
            xs.sort();
            xs.dedup();
            for &xv in &xs {
                let pxy = in_y.iter().filter(|&&a| a == xv).count() as f64 / n;
                h -= pxy * (pxy / py).log2();
            }
        }
        h
    }

    #[test]
    fn identical_maps_score_zero() {
        let a = map(&[0, 0, 1, 1, 2, 5]);
        let vi = split_vi(&a, &a).unwrap();
        let re = split_rand(&a, &a).unwrap();
        assert_eq!((vi.over, vi.under), (0.0, 0.0));
        assert_eq!((re.over, re.under), (0.0, 0.0));
        assert_eq!(rand_f_score(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn halves_against_one_region() {
        let gt = map(&[0, 0, 0, 1, 1, 1]);
        let sg = map(&[7; 6]);
        let vi = split_vi(&gt, &sg).unwrap();
        assert!((vi.under - 1.0).abs() < 1e-12);
        assert_eq!(vi.over, 0.0);
    }

    #[test]
    fn four_voxel_pairs() {
        let gt = map(&[0, 0, 1, 1]);
        let sg = map(&[0, 0, 0, 0]);
        let re = split_rand(&gt, &sg).unwrap();
        assert_eq!(re.over, 0.0);
        assert!((re.under - 4.0 / 6.0).abs() < 1e-15);
        // same-pairs with self: gt 8, sg 16, both 8
        let f = rand_f_score(&gt, &sg).unwrap();
        assert!((f - 2.0 * 0.5 / 1.5).abs() < 1e-15);
        assert_eq!(f, pair_oracle(&[0, 0, 1, 1], &[0, 0, 0, 0]).2);
    }

    #[test]
    fn merge_and_split_cost_the_same() {
        // GT regions of 3 and 5 merged, versus GT region of 8 split into 3 + 5
        let merged_gt = map(&[0, 0, 0, 1, 1, 1, 1, 1, 2, 2]);
        let merged_sg = map(&[0, 0, 0, 0, 0, 0, 0, 0, 2, 2]);
        let split_gt = merged_sg.clone();
        let split_sg = merged_gt.clone();
        let a = split_rand(&merged_gt, &merged_sg).unwrap();
        let b = split_rand(&split_gt, &split_sg).unwrap();
        assert_eq!(a.total(), b.total());
        assert_eq!((a.over, a.under), (b.under, b.over));
    }

    #[test]
    fn tiny_or_mismatched_inputs_fail() {
        assert!(split_rand(&map(&[0]), &map(&[0])).is_err());
        assert!(split_vi(&map(&[0, 1]), &map(&[0, 1, 2])).is_err());
    }

    fn labels(len: usize) -> impl Strategy<Value = Vec<u64>> {
        proptest::collection::vec(0u64..4, len)
    }

    proptest! {
        #[test]
        fn pair_counts_match_oracle(a in labels(8), b in labels(8)) {
            let (over, under, f) = pair_oracle(&a, &b);
            let re = split_rand(&map(&a), &map(&b)).unwrap();
            prop_assert_eq!(re.over, over);
            prop_assert_eq!(re.under, under);
            prop_assert_eq!(rand_f_score(&map(&a), &map(&b)).unwrap(), f);
        }

        #[test]
        fn vi_matches_definition(a in labels(6), b in labels(6)) {
            let vi = split_vi(&map(&a), &map(&b)).unwrap();
            prop_assert!((vi.under - conditional_entropy(&a, &b)).abs() < 1e-12);
            prop_assert!((vi.over - conditional_entropy(&b, &a)).abs() < 1e-12);
        }

        #[test]
        fn swapping_roles_swaps_parts(a in labels(12), b in labels(12)) {
            let (ga, gb) = (map(&a), map(&b));
            let x = split_vi(&ga, &gb).unwrap();
            let y = split_vi(&gb, &ga).unwrap();
            prop_assert!((x.over - y.under).abs() < 1e-12 && (x.under - y.over).abs() < 1e-12);
            let x = split_rand(&ga, &gb).unwrap();
            let y = split_rand(&gb, &ga).unwrap();
            prop_assert_eq!((x.over, x.under), (y.under, y.over));
        }

        #[test]
        fn relabeling_changes_nothing(a in labels(10), b in labels(10), shift in 1u64..50) {
            let b2: Vec<u64> = b.iter().map(|&v| (3 - v) * 7 + shift).collect();
            let e1 = evaluate(&map(&a), &map(&b)).unwrap();
            let e2 = evaluate(&map(&a), &map(&b2)).unwrap();
            prop_assert!((e1.vi.over - e2.vi.over).abs() < 1e-12 && (e1.vi.under - e2.vi.under).abs() < 1e-12);
            prop_assert_eq!(e1.rand, e2.rand);
            prop_assert_eq!(e1.rand_f, e2.rand_f);
        }

        #[test]
        fn refining_never_adds_false_merges(a in labels(12), b in labels(12), cut in labels(12)) {
            // refine b by splitting each region along `cut`
            let refined: Vec<u64> = b.iter().zip(&cut).map(|(&x, &c)| x * 4 + c).collect();
            let coarse = split_rand(&map(&a), &map(&b)).unwrap();
            let fine = split_rand(&map(&a), &map(&refined)).unwrap();
            prop_assert!(fine.under <= coarse.under);
        }
    }
}
