use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureBank;

const LLOYD_ITERATIONS: usize = 100;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

/// k-means on standardized rows, seeded k-means++ style, then Lloyd
/// iterations. Returns the centers.
pub fn kmeans(bank: &FeatureBank, k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let n = bank.n();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("cannot form {k} clusters from {n} samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![bank.row(first).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(bank.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if t < d {
                        break;
                    }
                    t -= d;
                }
            }
            pick.expect("positive total mass")
        } else {
            // every remaining point coincides with a center
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centers.push(bank.row(pick).to_vec());
        let c = centers.last().expect("just pushed");
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(bank.row(i), c));
        }
    }

    let d = bank.d();
    let mut assignment = vec![usize::MAX; n];
    for _ in 0..LLOYD_ITERATIONS {
        let mut changed = false;
        for (i, a) in assignment.iter_mut().enumerate() {
            let c = nearest(bank.row(i), &centers);
            changed |= *a != c;
            *a = c;
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignment.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(bank.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            // an emptied cluster keeps its old center
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Ok(centers)
}

/// Initial labeled boundaries: `round(fraction * n)` k-means centers on
/// standardized features, each replaced by the nearest boundary not already
/// taken. Sorted ascending.
pub fn init_boundary_subset(features: &FeatureBank, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("initial fraction {fraction} outside (0, 1]")));
    }
    let n = features.n();
    let k = (fraction * n as f64).round() as usize;
    if k == 0 {
        return Err(Error::InvalidArgument(format!("{fraction} of {n} boundaries rounds to no samples")));
    }
    let bank = features.standardized();
    let centers = kmeans(&bank, k, seed)?;
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(k);
    for center in &centers {
        let mut best = (f64::INFINITY, usize::MAX);
        for i in (0..n).filter(|&i| !taken[i]) {
            let d = sq_dist(bank.row(i), center);
            if d < best.0 {
                best = (d, i);
            }
        }
        taken[best.1] = true;
        out.push(best.1);
    }
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn two_clusters(per: usize, seed: u64) -> FeatureBank {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let rows: Vec<Vec<f64>> = (0..2 * per)
            .map(|i| {
                let c = if i < per { 0.0 } else { 10.0 };
                vec![c + noise.sample(&mut rng), -c + noise.sample(&mut rng)]
            })
            .collect();
        FeatureBank::from_rows(&rows).unwrap()
    }

    #[test]
    fn one_pick_per_cluster() {
        for seed in 0..5 {
            let bank = two_clusters(30, seed);
            let picks = init_boundary_subset(&bank, 2.0 / 60.0, seed).unwrap();
            assert_eq!(picks.len(), 2);
            assert!(picks[0] < 30 && picks[1] >= 30, "{picks:?}");
        }
    }

    #[test]
    fn full_fraction_takes_everything() {
        let bank = FeatureBank::from_rows(&[vec![0.0], vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(init_boundary_subset(&bank, 1.0, 3).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn reproducible_and_validated() {
        let bank = two_clusters(40, 9);
        let a = init_boundary_subset(&bank, 0.1, 5).unwrap();
        assert_eq!(a, init_boundary_subset(&bank, 0.1, 5).unwrap());
        assert_eq!(a.len(), 8);
        assert!(init_boundary_subset(&bank, 0.001, 5).is_err());
        assert!(init_boundary_subset(&bank, 0.0, 5).is_err());
    }
}
