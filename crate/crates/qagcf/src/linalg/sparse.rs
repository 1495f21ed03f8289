//! Sparse matrix in CSR form, built from coordinate triplets.

use thiserror::Error;

use super::DenseMatrix;
use crate::par;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("entry ({0}, {1}) out of bounds for {2}x{3} matrix")]
    OutOfBounds(u32, u32, usize, usize),
    #[error("duplicate entry at ({0}, {1})")]
    DuplicateEntry(u32, u32),
    #[error("non-finite weight at ({0}, {1})")]
    NonFiniteWeight(u32, u32),
}

/// Sparse matrix stored as CSR with column indices sorted within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Build from coordinate triplets. Rejects out-of-range indices,
    /// duplicate coordinates and non-finite weights; zero weights are dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(u32, u32, f64)>,
    ) -> Result<Self, SparseError> {
        for &(i, j, w) in &triplets {
            if (i as usize) >= rows || (j as usize) >= cols {
                return Err(SparseError::OutOfBounds(i, j, rows, cols));
            }
            if !w.is_finite() {
                return Err(SparseError::NonFiniteWeight(i, j));
            }
        }
        triplets.sort_unstable_by_key(|&(i, j, _)| (i, j));
        for pair in triplets.windows(2) {
            if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
                return Err(SparseError::DuplicateEntry(pair[0].0, pair[0].1));
            }
        }
        triplets.retain(|&(_, _, w)| w != 0.0);

        let mut indptr = vec![0usize; rows + 1];
        for &(i, _, _) in &triplets {
            indptr[i as usize + 1] += 1;
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        let indices = triplets.iter().map(|&(_, j, _)| j).collect();
        let values = triplets.iter().map(|&(_, _, w)| w).collect();
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Column indices and values of row `i`.
    pub fn row_entries(&self, i: usize) -> (&[u32], &[f64]) {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn get(&self, i: usize, j: u32) -> Option<f64> {
        let (cols, vals) = self.row_entries(i);
        cols.binary_search(&j).ok().map(|p| vals[p])
    }

    pub fn triplets(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        (0..self.rows).flat_map(move |i| {
            let (cols, vals) = self.row_entries(i);
            cols.iter()
                .zip(vals)
                .map(move |(&j, &w)| (i as u32, j, w))
        })
    }

    /// Exact structural + numeric symmetry.
    pub fn is_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        self.triplets().all(|(i, j, w)| self.get(j as usize, i) == Some(w))
    }

    /// y = self * x, row-parallel.
    pub fn spmm(&self, x: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, x.rows(), "dimension mismatch in spmm");
        let d = x.cols();
        let mut out = DenseMatrix::zeros(self.rows, d);
        par::for_each_row(out.data_mut(), d, |i, row| self.spmm_row(x, i, row));
        out
    }

    /// Sequential reference version of [`spmm`].
    pub fn spmm_seq(&self, x: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, x.rows(), "dimension mismatch in spmm");
        let d = x.cols();
        let mut out = DenseMatrix::zeros(self.rows, d);
        par::for_each_row_seq(out.data_mut(), d, |i, row| self.spmm_row(x, i, row));
        out
    }

    fn spmm_row(&self, x: &DenseMatrix, i: usize, row: &mut [f64]) {
        let (cols, vals) = self.row_entries(i);
        for (&j, &w) in cols.iter().zip(vals) {
            let src = x.row(j as usize);
            for (o, &s) in row.iter_mut().zip(src) {
                *o += w * s;
            }
        }
    }

    /// Dense copy, for small oracles only.
    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for (i, j, w) in self.triplets() {
            out.set(i as usize, j as usize, w);
        }
        out
    }
}
