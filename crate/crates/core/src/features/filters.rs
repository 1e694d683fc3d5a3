//! Separable Gaussian-derivative filtering on voxel grids with mirrored
//! borders.

use rayon::prelude::*;

use crate::grid::Dims;

/// Kernel half-width in units of sigma.
const TRUNCATE: f64 = 4.0;

/// Sampled Gaussian derivative kernel of the given order (0, 1 or 2),
/// normalized so that it responds exactly to constants, ramps and parabolas
/// respectively. Index `r` holds the tap for offset `r - radius`.
pub fn gaussian_kernel(sigma: f64, order: usize) -> Vec<f64> {
    let radius = (TRUNCATE * sigma).ceil().max(1.0) as i64;
    let offsets: Vec<f64> = (-radius..=radius).map(|k| k as f64).collect();
    let g: Vec<f64> = offsets.iter().map(|x| (-x * x / (2.0 * sigma * sigma)).exp()).collect();
    let sum_g: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / sum_g).collect();
    match order {
        0 => g,
        1 => {
            let k: Vec<f64> = offsets.iter().zip(&g).map(|(x, gv)| -x * gv).collect();
            // out = sum_k K(k) f(i - k); a unit ramp must give slope 1
            let moment: f64 = offsets.iter().zip(&k).map(|(x, kv)| x * kv).sum();
            k.iter().map(|v| -v / moment).collect()
        }
        2 => {
            let s2 = sigma * sigma;
            let raw: Vec<f64> =
                offsets.iter().zip(&g).map(|(x, gv)| (x * x / (s2 * s2) - 1.0 / s2) * gv).collect();
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            let centered: Vec<f64> = raw.iter().map(|v| v - mean).collect();
            let moment: f64 = offsets.iter().zip(&centered).map(|(x, kv)| x * x * kv).sum();
            centered.iter().map(|v| 2.0 * v / moment).collect()
        }
        _ => panic!("unsupported derivative order {order}"),
    }
}

/// Mirror an out-of-range coordinate back into `0..n` (half-sample
/// symmetric: `... b a | a b c | c b ...`).
#[inline]
fn mirror(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * n;
    i = i.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

/// Convolve along one axis.
pub fn convolve_axis(data: &[f64], dims: Dims, axis: usize, kernel: &[f64]) -> Vec<f64> {
    let extent = dims.as_array()[axis];
    if extent == 1 {
        // a singleton axis sees a constant signal
        let gain: f64 = kernel.iter().sum();
        return data.iter().map(|v| v * gain).collect();
    }
    let stride = match axis {
        0 => 1,
        1 => dims.x,
        _ => dims.x * dims.y,
    };
    let radius = (kernel.len() / 2) as i64;
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let c = [i % dims.x, (i / dims.x) % dims.y, i / (dims.x * dims.y)][axis] as i64;
            let base = i - c as usize * stride;
            kernel
                .iter()
                .enumerate()
                .map(|(r, w)| {
                    let src = mirror(c - (r as i64 - radius), extent);
                    w * data[base + src * stride]
                })
                .sum()
        })
        .collect()
}

/// Gaussian derivative with per-axis orders `[ox, oy, oz]`. Orders on
/// singleton axes must be zero.
pub fn gaussian_derivative(data: &[f64], dims: Dims, sigma: f64, orders: [usize; 3]) -> Vec<f64> {
    let mut out = data.to_vec();
    for axis in 0..3 {
        if dims.as_array()[axis] == 1 {
            debug_assert_eq!(orders[axis], 0);
            continue;
        }
        out = convolve_axis(&out, dims, axis, &gaussian_kernel(sigma, orders[axis]));
    }
    out
}

/// Eigenvalues of a symmetric 2x2 matrix, descending.
pub fn eigen_sym2(a: f64, b: f64, d: f64) -> [f64; 2] {
    let mean = 0.5 * (a + d);
    let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    [mean + r, mean - r]
}

/// Eigenvalues of the symmetric matrix [[a,d,e],[d,b,f],[e,f,c]], descending.
pub fn eigen_sym3(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> [f64; 3] {
    let p1 = d * d + e * e + f * f;
    if p1 <= 1e-300 {
        let mut v = [a, b, c];
        v.sort_by(|x, y| y.total_cmp(x));
        return v;
    }
    let q = (a + b + c) / 3.0;
    let p2 = (a - q).powi(2) + (b - q).powi(2) + (c - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    // B = (A - qI) / p
    let (ba, bb, bc, bd, be, bf) = ((a - q) / p, (b - q) / p, (c - q) / p, d / p, e / p, f / p);
    let det_b = ba * (bb * bc - bf * bf) - bd * (bd * bc - bf * be) + be * (bd * bf - bb * be);
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let l1 = q + 2.0 * p * phi.cos();
    let l3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let l2 = 3.0 * q - l1 - l3;
    [l1, l2, l3]
}
