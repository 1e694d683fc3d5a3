//! Compressed sparse row matrix, just enough for graph Laplacian work.

use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Square `n x n` matrix from `(row, col, value)` triplets. Duplicate
    /// entries are summed; columns within a row end up sorted.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(r, c, v) in triplets {
            rows[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        for row in &mut rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *values.last_mut().expect("previous entry") += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix { n, indptr, indices, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    /// Same sparsity pattern with every value mapped through `f(row, col, v)`.
    pub fn map_values(&self, f: impl Fn(usize, usize, f64) -> f64) -> CsrMatrix {
        let mut values = self.values.clone();
        for r in 0..self.n {
            for k in self.indptr[r]..self.indptr[r + 1] {
                values[k] = f(r, self.indices[k], self.values[k]);
            }
        }
        CsrMatrix { values, ..self.clone() }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|r| self.row(r).all(|(c, v)| (self.get(c, r) - v).abs() <= tol))
    }

    /// `out = self * dense`, where `dense` is `n x k` row-major.
    pub fn mul_dense(&self, dense: &[f64], k: usize, out: &mut [f64]) {
        debug_assert_eq!(dense.len(), self.n * k);
        out.par_chunks_mut(k).enumerate().for_each(|(r, row_out)| {
            row_out.iter_mut().for_each(|v| *v = 0.0);
            for (c, w) in self.row(r) {
                for (o, x) in row_out.iter_mut().zip(&dense[c * k..(c + 1) * k]) {
                    *o += w * x;
                }
            }
        });
    }
}
