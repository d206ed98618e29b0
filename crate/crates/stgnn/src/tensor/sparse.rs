//! Sparse matrix storage used by the graph-aware matmul primitive.
//!
//! Storage is chosen at construction time: small matrices (n <= 64) fall
//! back to a dense buffer, larger ones keep CSR plus the transposed CSR so
//! the backward pass can multiply by the transpose without scattering.

use crate::error::{Error, Result};

const DENSE_LIMIT: usize = 64;

#[derive(Debug, Clone)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    storage: Storage,
}

#[derive(Debug, Clone)]
enum Storage {
    Dense(Vec<f64>),
    Csr { fwd: Csr, bwd: Csr },
}

#[derive(Debug, Clone)]
struct Csr {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Csr {
        let mut sorted: Vec<&(usize, usize, f64)> = triplets.iter().collect();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut vals = Vec::with_capacity(sorted.len());
        for &&(r, c, v) in &sorted {
            debug_assert!(r < rows && c < cols);
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            vals.push(v);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Csr { row_ptr, col_idx, vals }
    }

    /// out[r, :] += sum_c vals[r,c] * x[c, :]
    fn mul_dense(&self, rows: usize, x: &[f64], d: usize, out: &mut [f64]) {
        for r in 0..rows {
            let lo = self.row_ptr[r];
            let hi = self.row_ptr[r + 1];
            let o = &mut out[r * d..(r + 1) * d];
            for e in lo..hi {
                let c = self.col_idx[e];
                let v = self.vals[e];
                let xr = &x[c * d..(c + 1) * d];
                for (ov, &xv) in o.iter_mut().zip(xr) {
                    *ov += v * xv;
                }
            }
        }
    }
}

impl SparseMatrix {
    /// Build from (row, col, value) triplets. Duplicate coordinates are
    /// rejected. Zero values are dropped.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<SparseMatrix> {
        let mut seen: Vec<(usize, usize)> = triplets.iter().map(|t| (t.0, t.1)).collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Graph("duplicate (row, col) entry in sparse matrix".into()));
        }
        for &(r, c, _) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::Graph(format!(
                    "sparse entry ({r}, {c}) out of bounds for {rows}x{cols}"
                )));
            }
        }
        let nz: Vec<(usize, usize, f64)> =
            triplets.iter().copied().filter(|&(_, _, v)| v != 0.0).collect();
        let storage = if rows.max(cols) <= DENSE_LIMIT {
            let mut dense = vec![0.0; rows * cols];
            for &(r, c, v) in &nz {
                dense[r * cols + c] = v;
            }
            Storage::Dense(dense)
        } else {
            let transposed: Vec<(usize, usize, f64)> =
                nz.iter().map(|&(r, c, v)| (c, r, v)).collect();
            Storage::Csr {
                fwd: Csr::from_triplets(rows, cols, &nz),
                bwd: Csr::from_triplets(cols, rows, &transposed),
            }
        };
        Ok(SparseMatrix { rows, cols, storage })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// out[rows*d] += M * x where x is [cols, d].
    pub fn mul_dense(&self, x: &[f64], d: usize, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols * d);
        debug_assert_eq!(out.len(), self.rows * d);
        match &self.storage {
            Storage::Dense(m) => super::kernels::matmul(m, x, self.rows, self.cols, d, out),
            Storage::Csr { fwd, .. } => fwd.mul_dense(self.rows, x, d, out),
        }
    }

    /// out[cols*d] += M^T * x where x is [rows, d].
    pub fn mul_dense_transposed(&self, x: &[f64], d: usize, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows * d);
        debug_assert_eq!(out.len(), self.cols * d);
        match &self.storage {
            Storage::Dense(m) => super::kernels::matmul_atb(m, x, self.rows, self.cols, d, out),
            Storage::Csr { bwd, .. } => bwd.mul_dense(self.cols, x, d, out),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match &self.storage {
            Storage::Dense(m) => m.clone(),
            Storage::Csr { fwd, .. } => {
                let mut out = vec![0.0; self.rows * self.cols];
                for r in 0..self.rows {
                    for e in fwd.row_ptr[r]..fwd.row_ptr[r + 1] {
                        out[r * self.cols + fwd.col_idx[e]] = fwd.vals[e];
                    }
                }
                out
            }
        }
    }

    pub fn nnz(&self) -> usize {
        match &self.storage {
            Storage::Dense(m) => m.iter().filter(|&&v| v != 0.0).count(),
            Storage::Csr { fwd, .. } => fwd.vals.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_matches_dense_product() {
        // Force the CSR path with a 70x70 matrix.
        let n = 70;
        let mut triplets = Vec::new();
        for i in 0..n {
            triplets.push((i, i, 1.0 + i as f64 * 0.01));
            if i + 1 < n {
                triplets.push((i, i + 1, 0.5));
            }
        }
        let m = SparseMatrix::from_triplets(n, n, &triplets).unwrap();
        let x: Vec<f64> = (0..n * 3).map(|v| (v as f64).sin()).collect();
        let mut out = vec![0.0; n * 3];
        m.mul_dense(&x, 3, &mut out);

        let dense = m.to_dense();
        let mut expect = vec![0.0; n * 3];
        super::super::kernels::matmul(&dense, &x, n, n, 3, &mut expect);
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }

        let mut out_t = vec![0.0; n * 3];
        m.mul_dense_transposed(&x, 3, &mut out_t);
        let (dense_t, _) = super::super::kernels::permute(&dense, &[n, n], &[1, 0]);
        let mut expect_t = vec![0.0; n * 3];
        super::super::kernels::matmul(&dense_t, &x, n, n, 3, &mut expect_t);
        for (a, b) in out_t.iter().zip(&expect_t) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_entry_rejected() {
        let err = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0)]);
        assert!(err.is_err());
    }
}
