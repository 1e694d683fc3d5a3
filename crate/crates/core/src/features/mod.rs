//! Per-voxel feature descriptors and the sparse Gaussian affinity graph.

mod affinity;
pub mod filters;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use affinity::{build_affinity_graph, gaussian_affinity, AffinityGraph, CovarianceModel};

use crate::error::{Error, Result};
use crate::grid::{Dims, RasterVolume};
use crate::io;
use filters::{eigen_sym2, eigen_sym3, gaussian_derivative};

pub const DEFAULT_SCALES: [f64; 3] = [1.0, 2.0, 4.0];

/// Per-feature bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureInfo {
    pub name: String,
    pub scale: Option<f64>,
}

/// `n` samples by `d` real features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    n: usize,
    info: Vec<FeatureInfo>,
    values: Vec<f64>,
}

impl FeatureBank {
    pub fn new(n: usize, info: Vec<FeatureInfo>, values: Vec<f64>) -> Result<Self> {
        let d = info.len();
        if values.len() != n * d {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values for {n} samples x {d} features",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite feature at sample {} column {}",
                pos / d.max(1),
                pos % d.max(1)
            )));
        }
        Ok(FeatureBank { n, info, values })
    }

    /// Bank with anonymous columns `f0, f1, ...`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch("ragged feature rows".into()));
        }
        let info = (0..d).map(|j| FeatureInfo { name: format!("f{j}"), scale: None }).collect();
        Self::new(rows.len(), info, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.info.len()
    }

    pub fn info(&self) -> &[FeatureInfo] {
        &self.info
    }

    pub fn names(&self) -> Vec<String> {
        self.info.iter().map(|f| f.name.clone()).collect()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.d().max(1)).take(self.n)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> FeatureBank {
        let values = indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        FeatureBank { n: indices.len(), info: self.info.clone(), values }
    }

    /// Per-column mean and standard deviation (population).
    pub fn column_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.d();
        let mut mean = vec![0.0; d];
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.n.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in self.rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        (mean, var.into_iter().map(|s| (s / n).sqrt()).collect())
    }

    /// Column-standardized copy; constant columns become zero.
    pub fn standardized(&self) -> FeatureBank {
        let (mean, std) = self.column_moments();
        let d = self.d();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let j = k % d;
                if std[j] > 0.0 {
                    (v - mean[j]) / std[j]
                } else {
                    0.0
                }
            })
            .collect();
        FeatureBank { n: self.n, info: self.info.clone(), values }
    }

    pub fn save(&self, header: &Path, dims: Option<Dims>) -> Result<()> {
        io::save_matrix_f32(header, &self.values, self.n, &self.names(), dims)
    }

    /// Loads a bank written by [`FeatureBank::save`]. Values pass through
    /// f32 on disk.
    pub fn load(header: &Path) -> Result<(FeatureBank, Option<Dims>)> {
        let (h, values) = io::load_matrix_f32(header)?;
        let info = h.names.into_iter().map(|name| FeatureInfo { name, scale: None }).collect();
        let dims = match h.dims {
            Some([x, y, z]) => Some(Dims::new(x, y, z)?),
            None => None,
        };
        Ok((FeatureBank::new(h.n, info, values)?, dims))
    }
}

/// Number of features per scale for a grid with `active` non-singleton axes:
/// smoothed intensity, gradient magnitude, LoG, one Hessian eigenvalue per
/// axis, one structure-tensor eigenvalue per axis.
pub fn features_per_scale(active: usize) -> usize {
    3 + 2 * active
}

/// Multi-scale pixel features. Intensities are rescaled to `[0, 1]` first.
pub fn compute_pixel_features(volume: &RasterVolume, scales: &[f64]) -> Result<FeatureBank> {
    let dims = volume.dims();
    if scales.is_empty() {
        return Err(Error::InvalidArgument("at least one feature scale is required".into()));
    }
    let axes = dims.active_axes();
    if axes.is_empty() {
        return Err(Error::InvalidArgument("volume has no extent".into()));
    }
    let smallest = axes.iter().map(|&a| dims.as_array()[a]).min().unwrap_or(1) as f64;
    for &s in scales {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidArgument(format!("feature scale {s} must be > 0")));
        }
        if s > smallest / 2.0 {
            return Err(Error::InvalidArgument(format!(
                "feature scale {s} exceeds half the smallest dimension ({smallest})"
            )));
        }
    }
    let base: Vec<f64> = volume.voxels().iter().map(|&v| v as f64 / 255.0).collect();
    let mut channels: Vec<(FeatureInfo, Vec<f64>)> = Vec::new();
    for &sigma in scales {
        channels.extend(scale_features(&base, dims, &axes, sigma));
    }
    let n = dims.len();
    let d = channels.len();
    let mut values = vec![0.0; n * d];
    values.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
        for (slot, (_, ch)) in row.iter_mut().zip(&channels) {
            *slot = ch[i];
        }
    });
    FeatureBank::new(n, channels.into_iter().map(|(info, _)| info).collect(), values)
}

fn order(axis: usize, count: usize) -> [usize; 3] {
    let mut o = [0; 3];
    o[axis] = count;
    o
}

fn scale_features(
    base: &[f64],
    dims: Dims,
    axes: &[usize],
    sigma: f64,
) -> Vec<(FeatureInfo, Vec<f64>)> {
    let info = |name: &str| FeatureInfo { name: format!("{name}_s{sigma}"), scale: Some(sigma) };
    let n = base.len();
    let smooth = gaussian_derivative(base, dims, sigma, [0, 0, 0]);

    let grads: Vec<Vec<f64>> =
        axes.iter().map(|&a| gaussian_derivative(base, dims, sigma, order(a, 1))).collect();
    let grad_mag: Vec<f64> =
        (0..n).map(|i| grads.iter().map(|g| g[i] * g[i]).sum::<f64>().sqrt()).collect();

    // Hessian entries, upper triangle in (a, b) order
    let mut hess = Vec::new();
    for (ia, &a) in axes.iter().enumerate() {
        for &b in &axes[ia..] {
            let mut o = [0; 3];
            o[a] += 1;
            o[b] += 1;
            hess.push(gaussian_derivative(base, dims, sigma, o));
        }
    }
    let diag_idx: Vec<usize> = match axes.len() {
        1 => vec![0],
        2 => vec![0, 2],
        _ => vec![0, 3, 5],
    };
    let log: Vec<f64> = (0..n).map(|i| diag_idx.iter().map(|&k| hess[k][i]).sum()).collect();

    // structure tensor: inner gradients at sigma, outer smoothing at sigma / 2
    let outer = (sigma / 2.0).max(0.5);
    let mut tensor = Vec::new();
    for ia in 0..axes.len() {
        for ib in ia..axes.len() {
            let prod: Vec<f64> = (0..n).map(|i| grads[ia][i] * grads[ib][i]).collect();
            tensor.push(gaussian_derivative(&prod, dims, outer, [0, 0, 0]));
        }
    }

    let eig = |m: &[Vec<f64>], i: usize| -> Vec<f64> {
        match axes.len() {
            1 => vec![m[0][i]],
            2 => eigen_sym2(m[0][i], m[1][i], m[2][i]).to_vec(),
            // upper triangle order: xx, xy, xz, yy, yz, zz
            _ => eigen_sym3(m[0][i], m[3][i], m[5][i], m[1][i], m[2][i], m[4][i]).to_vec(),
        }
    };
    let hess_eigs: Vec<Vec<f64>> = (0..n).map(|i| eig(&hess, i)).collect();
    let tensor_eigs: Vec<Vec<f64>> = (0..n).map(|i| eig(&tensor, i)).collect();

    let mut out = vec![
        (info("gaussian"), smooth),
        (info("gradient_magnitude"), grad_mag),
        (info("laplacian_of_gaussian"), log),
    ];
    for e in 0..axes.len() {
        out.push((info(&format!("hessian_eig{e}")), hess_eigs.iter().map(|v| v[e]).collect()));
    }
    for e in 0..axes.len() {
        out.push((
            info(&format!("structure_tensor_eig{e}")),
            tensor_eigs.iter().map(|v| v[e]).collect(),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_volume_has_zero_gradient() {
        let vol = RasterVolume::filled(Dims::planar(20, 20).unwrap(), 140);
        let bank = compute_pixel_features(&vol, &DEFAULT_SCALES).unwrap();
        for (j, info) in bank.info().iter().enumerate() {
            if info.name.starts_with("gradient_magnitude") {
                assert!(bank.rows().all(|r| r[j].abs() < 1e-12), "{}", info.name);
            }
        }
    }

    #[test]
    fn feature_counts() {
        let vol3 = RasterVolume::filled(Dims::new(10, 10, 10).unwrap(), 3);
        let bank = compute_pixel_features(&vol3, &[1.0, 2.0, 4.0]).unwrap();
        // three scales x (smooth + gradmag + LoG + 3 Hessian + 3 tensor eigenvalues)
        assert_eq!(bank.d(), 3 * (1 + 1 + 1 + 3 + 3));
        let vol2 = RasterVolume::filled(Dims::planar(10, 10).unwrap(), 3);
        assert_eq!(compute_pixel_features(&vol2, &[1.0, 2.0, 4.0]).unwrap().d(), 21);
    }

    #[test]
    fn step_edge_peaks_on_the_edge() {
        // intensity steps between x = 15 and x = 16; the sampled Gaussian
        // derivative of a step peaks at the two voxels straddling it
        let dims = Dims::planar(32, 8).unwrap();
        let voxels: Vec<u8> = (0..dims.len()).map(|i| if i % 32 < 16 { 40 } else { 200 }).collect();
        let vol = RasterVolume::new(dims, voxels).unwrap();
        for sigma in [1.0, 2.0] {
            let bank = compute_pixel_features(&vol, &[sigma]).unwrap();
            let row = 4 * 32;
            let profile: Vec<f64> = (0..32).map(|x| bank.row(row + x)[1]).collect();
            let argmax = (0..32).max_by(|&a, &b| profile[a].total_cmp(&profile[b])).unwrap();
            assert!(argmax == 15 || argmax == 16, "sigma {sigma}: peak at {argmax}");
            // analytic response at the edge: jump * g_sigma(0.5) summed over taps
            let jump = 160.0 / 255.0;
            let k = filters::gaussian_kernel(sigma, 1);
            let r = k.len() / 2;
            let expected: f64 = (0..k.len())
                .filter(|&t| (t as i64 - r as i64) <= -1)
                .map(|t| k[t] * jump)
                .sum();
            assert!((profile[16] - expected).abs() < 1e-9, "{} vs {expected}", profile[16]);
        }
    }

    #[test]
    fn features_are_deterministic() {
        let dims = Dims::planar(24, 24).unwrap();
        let vol = RasterVolume::new(dims, (0..dims.len()).map(|i| (i * 31 % 256) as u8).collect())
            .unwrap();
        let a = compute_pixel_features(&vol, &DEFAULT_SCALES).unwrap();
        let b = compute_pixel_features(&vol, &DEFAULT_SCALES).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn oversized_or_empty_scales_are_rejected() {
        let vol = RasterVolume::filled(Dims::planar(16, 16).unwrap(), 0);
        assert!(compute_pixel_features(&vol, &[9.0]).is_err());
        assert!(compute_pixel_features(&vol, &[]).is_err());
        assert!(compute_pixel_features(&vol, &[0.0]).is_err());
    }

    #[test]
    fn bank_round_trips_through_f32() {
        let dir = tempfile::tempdir().unwrap();
        let bank = FeatureBank::from_rows(&[vec![0.5, -1.25], vec![3.0, 8.0]]).unwrap();
        let header = dir.path().join("bank.json");
        bank.save(&header, None).unwrap();
        let (back, dims) = FeatureBank::load(&header).unwrap();
        assert_eq!(back.values(), bank.values());
        assert_eq!(dims, None);
    }

    #[test]
    fn non_finite_features_are_rejected() {
        assert!(FeatureBank::from_rows(&[vec![f64::NAN]]).is_err());
    }
}
