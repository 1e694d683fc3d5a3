//! Multiclass label propagation on a normalized affinity graph.
//!
//! Iterates `F <- P(S F)` with known rows clamped, where
//! `S = (1 - eps) D^-1/2 W D^-1/2` and `P` projects each row onto the
//! probability simplex.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::AffinityGraph;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Stop once the max-abs change between iterates drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub epsilon: f64,
    /// Loops reuse the previous solution as the starting point.
    pub warm_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tolerance: 1e-6, max_iterations: 2000, epsilon: 1e-3, warm_start: true }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance {} must be positive", self.tolerance)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.1) {
            return Err(Error::InvalidArgument(format!("epsilon {} outside (0, 0.1)", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Smoother {
    matrix: CsrMatrix,
    epsilon: f64,
}

impl Smoother {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }
}

/// `S_ij = (1 - eps) w_ij / sqrt(d_i d_j)`.
pub fn normalized_smoother(graph: &AffinityGraph, epsilon: f64) -> Result<Smoother> {
    if let Some(node) = graph.isolated_node() {
        return Err(Error::IsolatedNode { node });
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [0, 1)")));
    }
    let inv_sqrt: Vec<f64> = graph.degrees().iter().map(|d| 1.0 / d.sqrt()).collect();
    let matrix = graph.weights().map_values(|i, j, w| (1.0 - epsilon) * w * inv_sqrt[i] * inv_sqrt[j]);
    Ok(Smoother { matrix, epsilon })
}

/// Row-major `n x k` label confidences with the clamped rows recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistributionMatrix {
    n: usize,
    k: usize,
    data: Vec<f64>,
    known: Vec<Option<usize>>,
}

impl LabelDistributionMatrix {
    /// Known rows one-hot, the rest uniform.
    pub fn initial(n: usize, k: usize, known: &[(usize, usize)]) -> Result<Self> {
        let mut known_rows = vec![None; n];
        for &(i, c) in known {
            if i >= n || c >= k {
                return Err(Error::InvalidArgument(format!("known label ({i}, {c}) outside {n} x {k}")));
            }
            match known_rows[i] {
                Some(prev) if prev != c => {
                    return Err(Error::InvalidArgument(format!("row {i} labeled both {prev} and {c}")))
                }
                _ => known_rows[i] = Some(c),
            }
        }
        let mut m = LabelDistributionMatrix { n, k, data: vec![1.0 / k as f64; n * k], known: known_rows };
        m.clamp();
        Ok(m)
    }

    /// Wraps raw data, e.g. a stored solution. Rows are not re-projected.
    pub fn from_parts(n: usize, k: usize, data: Vec<f64>, known: Vec<Option<usize>>) -> Result<Self> {
        if data.len() != n * k || known.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} values and {} flags for {n} x {k}",
                data.len(),
                known.len()
            )));
        }
        Ok(LabelDistributionMatrix { n, k, data, known })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn known(&self) -> &[Option<usize>] {
        &self.known
    }

    /// Argmax per row, ties to the lowest class.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.n).map(|i| argmax(self.row(i))).collect()
    }

    fn clamp(&mut self) {
        for (i, known) in self.known.iter().enumerate() {
            if let Some(c) = *known {
                let row = &mut self.data[i * self.k..(i + 1) * self.k];
                row.iter_mut().for_each(|v| *v = 0.0);
                row[c] = 1.0;
            }
        }
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (c, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = c;
        }
    }
    best
}

/// Euclidean projection onto `{x >= 0, sum x = 1}`.
pub fn project_simplex(v: &mut [f64]) {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// Iteration cap hit; the last iterate is still returned.
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct Propagation {
    pub labels: LabelDistributionMatrix,
    pub iterations: usize,
    pub residual: f64,
    pub status: SolveStatus,
    /// Max-abs change after every iteration.
    pub residuals: Vec<f64>,
    /// Frobenius norm of the change after every iteration.
    pub step_norms: Vec<f64>,
}

/// Fixed-point solve. `known` holds `(row, class)` pairs; `init` is a
/// previous solution to start from (its clamping is replaced by `known`).
pub fn propagate(
    smoother: &Smoother,
    known: &[(usize, usize)],
    k: usize,
    init: Option<&LabelDistributionMatrix>,
    cfg: &SolverConfig,
) -> Result<Propagation> {
    if !(cfg.tolerance > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {} must be positive", cfg.tolerance)));
    }
    if known.is_empty() {
        return Err(Error::Empty("label propagation needs at least one known label".into()));
    }
    let n = smoother.n();
    let mut f = LabelDistributionMatrix::initial(n, k, known)?;
    if let Some(prev) = init {
        if prev.n != n || prev.k != k {
            return Err(Error::DimensionMismatch(format!(
                "warm start is {} x {}, expected {n} x {k}",
                prev.n, prev.k
            )));
        }
        f.data.copy_from_slice(&prev.data);
        f.clamp();
    }

    let mut next = vec![0.0; n * k];
    let mut residuals = Vec::new();
    let mut step_norms: Vec<f64> = Vec::new();
    let mut status = SolveStatus::MaxIterations;
    for _ in 0..cfg.max_iterations.max(1) {
        smoother.matrix.mul_dense(&f.data, k, &mut next);
        for row in next.chunks_mut(k) {
            project_simplex(row);
        }
        std::mem::swap(&mut f.data, &mut next);
        f.clamp();
        let (mut residual, mut step) = (0.0f64, 0.0);
        for (a, b) in f.data.iter().zip(&next) {
            residual = residual.max((a - b).abs());
            step += (a - b) * (a - b);
        }
        residuals.push(residual);
        step_norms.push(step.sqrt());
        if residual < cfg.tolerance && remaining_error(&step_norms) < cfg.tolerance {
            status = SolveStatus::Converged;
            break;
        }
    }
    if status == SolveStatus::MaxIterations {
        log::warn!(
            "label propagation stopped after {} iterations, residual {:.3e}",
            residuals.len(),
            residuals.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(Propagation {
        iterations: residuals.len(),
        residual: residuals.last().copied().unwrap_or(0.0),
        labels: f,
        status,
        residuals,
        step_norms,
    })
}

/// The iteration is a contraction in the Frobenius norm, so the distance to
/// the fixed point is at most `step * r / (1 - r)` where `r` is the
/// contraction rate, estimated here from recent step ratios.
fn remaining_error(step_norms: &[f64]) -> f64 {
    let last = *step_norms.last().expect("at least one step");
    if last == 0.0 {
        return 0.0;
    }
    if step_norms.len() < 2 {
        return f64::INFINITY;
    }
    let rate = step_norms
        .windows(2)
        .rev()
        .take(3)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 1.0 })
        .fold(0.0, f64::max)
        .min(1.0 - 1e-6);
    last * rate / (1.0 - rate)
}

/// `J(F) = 2 tr(F F^T (I - D^-1/2 W D^-1/2))`, with `F` row-major `n x k`.
pub fn cost(f: &[f64], k: usize, graph: &AffinityGraph) -> Result<f64> {
    let n = graph.n();
    if f.len() != n * k {
        return Err(Error::DimensionMismatch(format!("{} values for {n} x {k}", f.len())));
    }
    let row = |i: usize| &f[i * k..(i + 1) * k];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let d = graph.degrees();
    let mut total = 0.0;
    for i in 0..n {
        total += dot(row(i), row(i));
        for (j, w) in graph.neighbors(i) {
            total -= w / (d[i] * d[j]).sqrt() * dot(row(i), row(j));
        }
    }
    Ok(2.0 * total)
}
