//! Compressed sparse row operators.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Sparse matrix in CSR layout with sorted column indices per row.
///
/// Explicit zeros are kept so that operators assembled from the same element
/// connectivity share one sparsity pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> SparseOperator<T> {
    /// Builds from `(row, col, value)` triplets, summing duplicates in input
    /// order.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut counts = vec![0usize; rows + 1];
        for &(r, c, _) in triplets {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) out of bounds {rows}x{cols}");
            counts[r + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut cols_tmp = vec![0usize; triplets.len()];
        let mut vals_tmp = vec![T::zero(); triplets.len()];
        for &(r, c, v) in triplets {
            let k = fill[r];
            cols_tmp[k] = c;
            vals_tmp[k] = v;
            fill[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..rows {
            let (start, end) = (counts[r], counts[r + 1]);
            order.clear();
            order.extend(start..end);
            // Stable sort keeps summation order equal to triplet order.
            order.sort_by_key(|&k| cols_tmp[k]);
            let mut last: Option<usize> = None;
            for &k in &order {
                let c = cols_tmp[k];
                if last == Some(c) {
                    *values.last_mut().unwrap() += vals_tmp[k];
                } else {
                    col_idx.push(c);
                    values.push(vals_tmp[k]);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, T::one())).collect();
        Self::from_triplets(n, n, &triplets)
    }

    pub fn from_dense(m: &DMatrix<T>) -> Self {
        let mut triplets = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != T::zero() {
                    triplets.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &triplets)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Iterates the stored entries of row `r` as `(col, value)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Position of `(r, c)` in the value array, if stored.
    pub fn slot(&self, r: usize, c: usize) -> Option<usize> {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .binary_search(&c)
            .ok()
            .map(|k| range.start + k)
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.slot(r, c).map_or(T::zero(), |k| self.values[k])
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
    }

    /// Copy with the same pattern and new values.
    pub fn with_values(&self, values: Vec<T>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self { values, ..self.clone() }
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "matvec dimension");
        (0..self.rows)
            .map(|r| self.row(r).fold(T::zero(), |acc, (c, v)| acc + v * x[c]))
            .collect()
    }

    /// `y = A^T x`
    pub fn mul_vec_transpose(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows, "transposed matvec dimension");
        let mut y = vec![T::zero(); self.cols];
        for r in 0..self.rows {
            let xr = x[r];
            for (c, v) in self.row(r) {
                y[c] += v * xr;
            }
        }
        y
    }

    /// `x^T A y`
    pub fn bilinear(&self, x: &[T], y: &[T]) -> T {
        assert_eq!(x.len(), self.rows);
        assert_eq!(y.len(), self.cols);
        (0..self.rows).fold(T::zero(), |acc, r| {
            acc + x[r] * self.row(r).fold(T::zero(), |s, (c, v)| s + v * y[c])
        })
    }

    pub fn quadratic(&self, x: &[T]) -> T {
        self.bilinear(x, x)
    }

    /// Sparse times dense: `A X`, columns computed in parallel.
    pub fn mul_dense(&self, x: &DMatrix<T>) -> DMatrix<T> {
        assert_eq!(x.nrows(), self.cols, "sparse-dense product dimension");
        let cols: Vec<Vec<T>> = (0..x.ncols())
            .into_par_iter()
            .map(|j| self.mul_vec(x.column(j).as_slice()))
            .collect();
        DMatrix::from_fn(self.rows, x.ncols(), |i, j| cols[j][i])
    }

    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                triplets.push((c, r, v));
            }
        }
        Self::from_triplets(self.cols, self.rows, &triplets)
    }

    /// `alpha A + beta B` over the union of both patterns.
    pub fn linear_combination(&self, alpha: T, other: &Self, beta: T) -> Self {
        assert_eq!(self.shape(), other.shape(), "linear combination shapes");
        if self.same_pattern(other) {
            let values = self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| alpha * a + beta * b)
                .collect();
            return self.with_values(values);
        }
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.rows {
            triplets.extend(self.row(r).map(|(c, v)| (r, c, alpha * v)));
            triplets.extend(other.row(r).map(|(c, v)| (r, c, beta * v)));
        }
        Self::from_triplets(self.rows, self.cols, &triplets)
    }

    pub fn scale(&self, alpha: T) -> Self {
        self.with_values(self.values.iter().map(|&v| alpha * v).collect())
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    /// `max |A_ij - A_ji|`.
    pub fn symmetry_defect(&self) -> T {
        assert_eq!(self.rows, self.cols);
        let mut worst = T::zero();
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    /// Submatrix on the given row and column index sets.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_map = vec![usize::MAX; self.cols];
        for (k, &c) in cols.iter().enumerate() {
            col_map[c] = k;
        }
        let mut triplets = Vec::new();
        for (i, &r) in rows.iter().enumerate() {
            for (c, v) in self.row(r) {
                if col_map[c] != usize::MAX {
                    triplets.push((i, col_map[c], v));
                }
            }
        }
        Self::from_triplets(rows.len(), cols.len(), &triplets)
    }

    pub(crate) fn check_len(&self, context: &'static str, x: &[T]) -> Result<()> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.cols,
                actual: x.len(),
            });
        }
        Ok(())
    }
}
