//! Synthetic stand-ins for EM data: Voronoi cells separated by dark membrane
//! ridges, elliptical mitochondria with darker border rings, and additive
//! Gaussian noise. Also the two-moon point set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ClassLabel, Dims, RasterVolume, SegmentationMap};

/// Voxels whose second-nearest site is less than this much farther than the
/// nearest site are membrane. Any value >= 1 guarantees that face-adjacent
/// voxels of different cells never touch without membrane between them.
const MEMBRANE_GAP: f64 = 2.0;

const CYTOPLASM_LEVEL: f64 = 175.0;
const MITO_LEVEL: f64 = 118.0;
const MITO_BORDER_LEVEL: f64 = 78.0;
const MEMBRANE_LEVEL_RANGE: (f64, f64) = (42.0, 82.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub dims: Dims,
    pub cell_count: usize,
    pub mito_count: usize,
    pub noise_sigma: f64,
}

impl SynthConfig {
    /// The desk-scale fixture used by the end-to-end checks.
    pub fn desk_fixture(seed: u64) -> Self {
        SynthConfig {
            seed,
            dims: Dims { x: 96, y: 96, z: 1 },
            cell_count: 10,
            mito_count: 6,
            noise_sigma: 20.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub volume: RasterVolume,
    pub labels: Vec<ClassLabel>,
    pub segmentation: SegmentationMap,
}

impl SyntheticDataset {
    pub fn class_fraction(&self, class: ClassLabel) -> f64 {
        self.labels.iter().filter(|&&l| l == class).count() as f64 / self.labels.len() as f64
    }
}

pub fn generate_synthetic_volume(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    let d = cfg.dims;
    if cfg.cell_count == 0 {
        return Err(Error::InvalidArgument("cell_count must be >= 1".into()));
    }
    let axes_ok = |n: usize| n >= 16;
    if !(axes_ok(d.x) && axes_ok(d.y) && (d.z == 1 || axes_ok(d.z))) {
        return Err(Error::InvalidArgument(format!(
            "synthetic volumes need >= 16 voxels per axis, got {d:?}"
        )));
    }
    if !(cfg.noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument("noise_sigma must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sites = place_sites(&mut rng, d, cfg.cell_count);

    // membrane brightness per wall, indexed by the unordered site pair
    let n = sites.len();
    let mut wall_level = vec![0.0; n * n];
    for a in 0..n {
        for b in a + 1..n {
            let level = rng.random_range(MEMBRANE_LEVEL_RANGE.0..MEMBRANE_LEVEL_RANGE.1);
            wall_level[a * n + b] = level;
            wall_level[b * n + a] = level;
        }
    }

    let mut ids = vec![0u32; d.len()];
    let mut labels = vec![ClassLabel::Cytoplasm; d.len()];
    let mut level = vec![CYTOPLASM_LEVEL; d.len()];
    for (i, ((id, label), lvl)) in ids.iter_mut().zip(&mut labels).zip(&mut level).enumerate() {
        let p = voxel_center(d, i);
        let (first, second) = two_nearest(&sites, p);
        *id = first.0 as u32;
        if second.1 - first.1 < MEMBRANE_GAP {
            *label = ClassLabel::Membrane;
            *lvl = wall_level[first.0 * n + second.0];
        }
    }

    place_mitochondria(&mut rng, d, cfg.mito_count, &ids, &mut labels, &mut level)?;

    let mut voxels = Vec::with_capacity(d.len());
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for &lvl in &level {
        let v = if cfg.noise_sigma > 0.0 { lvl + noise.sample(&mut rng) } else { lvl };
        voxels.push(v.round().clamp(0.0, 255.0) as u8);
    }
    Ok(SyntheticDataset {
        volume: RasterVolume::new(d, voxels)?,
        labels,
        segmentation: SegmentationMap::new(d, ids)?,
    })
}

fn voxel_center(d: Dims, i: usize) -> [f64; 3] {
    let (x, y, z) = d.coords(i);
    [x as f64, y as f64, z as f64]
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// (site, distance) for the nearest and second-nearest sites. With a single
/// site the second distance is infinite.
fn two_nearest(sites: &[[f64; 3]], p: [f64; 3]) -> ((usize, f64), (usize, f64)) {
    let mut first = (0, f64::INFINITY);
    let mut second = (0, f64::INFINITY);
    for (s, &site) in sites.iter().enumerate() {
        let dd = dist(site, p);
        if dd < first.1 {
            second = first;
            first = (s, dd);
        } else if dd < second.1 {
            second = (s, dd);
        }
    }
    (first, second)
}

/// Sites on voxel centers, spread out by rejection sampling with a minimum
/// separation that relaxes when the volume is crowded.
fn place_sites(rng: &mut ChaCha8Rng, d: Dims, count: usize) -> Vec<[f64; 3]> {
    let active = d.active_axes().len() as f64;
    let per_cell = d.len() as f64 / count as f64;
    let mut min_sep = 0.7 * per_cell.powf(1.0 / active);
    let mut sites: Vec<[f64; 3]> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while sites.len() < count {
        let p = [
            rng.random_range(0..d.x) as f64,
            rng.random_range(0..d.y) as f64,
            rng.random_range(0..d.z) as f64,
        ];
        if sites.iter().all(|&s| dist(s, p) >= min_sep) {
            sites.push(p);
        }
        attempts += 1;
        if attempts % 2000 == 0 {
            min_sep = (min_sep * 0.9).max(MEMBRANE_GAP + 1.0);
        }
    }
    sites
}

fn place_mitochondria(
    rng: &mut ChaCha8Rng,
    d: Dims,
    count: usize,
    ids: &[u32],
    labels: &mut [ClassLabel],
    level: &mut [f64],
) -> Result<()> {
    const ATTEMPTS_PER_BODY: usize = 400;
    let planar = d.is_planar();
    let mut placed = 0;
    let mut attempts = 0;
    while placed < count {
        if attempts >= ATTEMPTS_PER_BODY * count {
            return Err(Error::MitochondriaPlacement { requested: count, placed });
        }
        attempts += 1;
        let center = [
            rng.random_range(0..d.x) as f64,
            rng.random_range(0..d.y) as f64,
            if planar { 0.0 } else { rng.random_range(0..d.z) as f64 },
        ];
        let semi = [
            rng.random_range(3.0..5.5),
            rng.random_range(2.0..3.5),
            if planar { 1.0 } else { rng.random_range(2.0..3.5) },
        ];
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (sin, cos) = angle.sin_cos();
        // scaled radius of `p` for an ellipsoid with semi-axes grown by `pad`
        let radius = |p: [f64; 3], pad: f64| {
            let (dx, dy, dz) = (p[0] - center[0], p[1] - center[1], p[2] - center[2]);
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            let w = if planar { 0.0 } else { dz / (semi[2] + pad) };
            ((u / (semi[0] + pad)).powi(2) + (v / (semi[1] + pad)).powi(2) + w * w).sqrt()
        };
        let reach = (semi[0] + 3.0).ceil() as i64;
        let cell = {
            let c = d.index(center[0] as usize, center[1] as usize, center[2] as usize);
            ids[c]
        };
        let mut footprint = Vec::new();
        let mut ok = true;
        let z_reach = if planar { 0 } else { reach };
        'scan: for dz in -z_reach..=z_reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (x, y, z) =
                        (center[0] as i64 + dx, center[1] as i64 + dy, center[2] as i64 + dz);
                    let p = [x as f64, y as f64, z as f64];
                    if radius(p, 2.0) > 1.0 {
                        continue;
                    }
                    // the padded ellipsoid must sit inside one cell's cytoplasm
                    if !d.contains(x, y, z) {
                        ok = false;
                        break 'scan;
                    }
                    let i = d.index(x as usize, y as usize, z as usize);
                    if ids[i] != cell || labels[i] != ClassLabel::Cytoplasm {
                        ok = false;
                        break 'scan;
                    }
                    if radius(p, 0.0) <= 1.0 {
                        footprint.push((i, ClassLabel::Mitochondria));
                    } else if radius(p, 1.0) <= 1.0 {
                        footprint.push((i, ClassLabel::MitochondriaBorder));
                    }
                }
            }
        }
        let has_interior = footprint.iter().any(|&(_, l)| l == ClassLabel::Mitochondria);
        if !ok || !has_interior {
            continue;
        }
        for (i, l) in footprint {
            labels[i] = l;
            level[i] = match l {
                ClassLabel::Mitochondria => MITO_LEVEL,
                _ => MITO_BORDER_LEVEL,
            };
        }
        placed += 1;
    }
    Ok(())
}

/// Two interleaved half circles with Gaussian jitter: class 0 on the upper
/// arc `(cos t, sin t)`, class 1 on the lower arc `(1 - cos t, 0.5 - sin t)`,
/// `t` evenly spaced over `[0, pi]`.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> (Vec<[f64; 2]>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("finite noise");
    let n_upper = n / 2;
    let n_lower = n - n_upper;
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let t_at = |i: usize, count: usize| {
        if count <= 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (count - 1) as f64
        }
    };
    for i in 0..n_upper {
        let t = t_at(i, n_upper);
        points.push([t.cos(), t.sin()]);
        labels.push(0);
    }
    for i in 0..n_lower {
        let t = t_at(i, n_lower);
        points.push([1.0 - t.cos(), 0.5 - t.sin()]);
        labels.push(1);
    }
    if noise > 0.0 {
        for p in &mut points {
            p[0] += jitter.sample(&mut rng);
            p[1] += jitter.sample(&mut rng);
        }
    }
    (points, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            dims: Dims { x: 64, y: 64, z: 1 },
            cell_count: 4,
            mito_count: 2,
            noise_sigma: 12.0,
        }
    }

    #[test]
    fn seed_one_has_four_regions_and_all_classes() {
        let ds = generate_synthetic_volume(&small(1)).unwrap();
        assert_eq!(ds.segmentation.region_count(), 4);
        for class in ClassLabel::ALL {
            assert!(ds.labels.contains(&class), "missing {class:?}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic_volume(&small(9)).unwrap();
        let b = generate_synthetic_volume(&small(9)).unwrap();
        assert_eq!(a.volume, b.volume);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.segmentation, b.segmentation);
        let c = generate_synthetic_volume(&small(10)).unwrap();
        assert_ne!(a.volume, c.volume);
    }

    #[test]
    fn noiseless_membrane_is_darker_than_cytoplasm() {
        let mut cfg = small(1);
        cfg.noise_sigma = 0.0;
        let ds = generate_synthetic_volume(&cfg).unwrap();
        let of = |class| {
            ds.labels
                .iter()
                .zip(ds.volume.voxels())
                .filter(move |(l, _)| **l == class)
                .map(|(_, v)| *v)
        };
        let membrane_max = of(ClassLabel::Membrane).max().unwrap();
        let cytoplasm_min = of(ClassLabel::Cytoplasm).min().unwrap();
        assert!(membrane_max < cytoplasm_min, "{membrane_max} vs {cytoplasm_min}");
    }

    #[test]
    fn membrane_separates_regions() {
        for seed in 0..5 {
            let ds = generate_synthetic_volume(&small(seed)).unwrap();
            let d = ds.volume.dims();
            let ids = ds.segmentation.ids();
            for i in 0..d.len() {
                for j in d.forward_neighbors(i) {
                    if ids[i] != ids[j] {
                        assert!(
                            ds.labels[i] == ClassLabel::Membrane
                                || ds.labels[j] == ClassLabel::Membrane,
                            "seed {seed}: unseparated regions at {i}/{j}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn region_count_matches_cells_in_3d() {
        let cfg = SynthConfig {
            seed: 3,
            dims: Dims { x: 32, y: 32, z: 24 },
            cell_count: 4,
            mito_count: 1,
            noise_sigma: 5.0,
        };
        let ds = generate_synthetic_volume(&cfg).unwrap();
        assert_eq!(ds.segmentation.region_count(), 4);
    }

    #[test]
    fn overfull_mitochondria_request_fails() {
        let mut cfg = small(1);
        cfg.mito_count = 500;
        assert!(matches!(
            generate_synthetic_volume(&cfg),
            Err(Error::MitochondriaPlacement { .. })
        ));
    }

    #[test]
    fn tiny_dims_are_rejected() {
        let mut cfg = small(1);
        cfg.dims = Dims { x: 8, y: 64, z: 1 };
        assert!(generate_synthetic_volume(&cfg).is_err());
    }

    #[test]
    fn two_moons_shape() {
        let (pts, labels) = two_moons(200, 0.0, 0);
        assert_eq!(pts.len(), 200);
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 100);
        assert!((pts[0][0] - 1.0).abs() < 1e-12 && pts[0][1].abs() < 1e-12);
        assert!((pts[100][0]).abs() < 1e-12 && (pts[100][1] - 0.5).abs() < 1e-12);
    }
}
