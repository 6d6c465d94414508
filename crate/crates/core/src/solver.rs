//! Sparse direct solves backed by faer, with the symbolic analysis reused
//! across refactorizations of operators sharing one pattern.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::Mat;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sparse::SparseOperator;

/// LU factorization of a square [`SparseOperator`].
#[derive(Debug, Clone)]
pub struct SparseLu<T: Real> {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    /// CSC value position of each CSR slot.
    to_csc: Vec<usize>,
    csc: SymbolicSparseColMat<usize>,
    symbolic: SymbolicLu<usize>,
    numeric: Option<Lu<usize, T>>,
}

impl<T: Real> SparseLu<T> {
    /// Symbolic analysis of the pattern of `op`.
    pub fn analyze(op: &SparseOperator<T>) -> Result<Self> {
        let (n, m) = op.shape();
        if n != m {
            return Err(Error::DimensionMismatch {
                context: "sparse LU of a non-square operator",
                expected: n,
                actual: m,
            });
        }
        let (row_ptr, col_idx) = (op.row_ptr(), op.col_idx());
        let mut col_ptr = vec![0usize; n + 1];
        for &c in col_idx {
            col_ptr[c + 1] += 1;
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        let mut next = col_ptr.clone();
        let mut row_idx = vec![0usize; col_idx.len()];
        let mut to_csc = vec![0usize; col_idx.len()];
        for r in 0..n {
            for s in row_ptr[r]..row_ptr[r + 1] {
                let c = col_idx[s];
                row_idx[next[c]] = r;
                to_csc[s] = next[c];
                next[c] += 1;
            }
        }
        let csc = SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx);
        let symbolic = SymbolicLu::try_new(csc.as_ref())
            .map_err(|e| Error::Factorization(format!("symbolic analysis failed: {e:?}")))?;
        Ok(Self {
            n,
            row_ptr: row_ptr.to_vec(),
            col_idx: col_idx.to_vec(),
            to_csc,
            csc,
            symbolic,
            numeric: None,
        })
    }

    /// Analyzes and factors `op` in one call.
    pub fn new(op: &SparseOperator<T>) -> Result<Self> {
        let mut lu = Self::analyze(op)?;
        lu.factor(op)?;
        Ok(lu)
    }

    /// Numeric factorization of an operator with the analyzed pattern.
    pub fn factor(&mut self, op: &SparseOperator<T>) -> Result<()> {
        if op.row_ptr() != self.row_ptr.as_slice() || op.col_idx() != self.col_idx.as_slice() {
            return Err(Error::Factorization(
                "operator pattern differs from the analyzed one".into(),
            ));
        }
        let mut values = vec![T::zero(); self.to_csc.len()];
        for (&dst, &v) in self.to_csc.iter().zip(op.values()) {
            values[dst] = v;
        }
        let mat = SparseColMatRef::new(self.csc.as_ref(), &values);
        let lu = Lu::try_new_with_symbolic(self.symbolic.clone(), mat)
            .map_err(|e| Error::Factorization(format!("numeric factorization failed: {e:?}")))?;
        self.numeric = Some(lu);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = rhs` with the current factorization. Non-finite output
    /// is reported as a factorization failure.
    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>> {
        let lu = self
            .numeric
            .as_ref()
            .ok_or_else(|| Error::Factorization("solve before numeric factorization".into()))?;
        if rhs.len() != self.n {
            return Err(Error::DimensionMismatch {
                context: "sparse LU right-hand side",
                expected: self.n,
                actual: rhs.len(),
            });
        }
        let mut x = Mat::<T>::from_fn(self.n, 1, |i, _| rhs[i]);
        lu.solve_in_place(x.as_mut());
        let out: Vec<T> = (0..self.n).map(|i| x[(i, 0)]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Factorization("singular system: non-finite solution".into()));
        }
        Ok(out)
    }
}

/// One-shot sparse solve.
pub fn sparse_solve<T: Real>(op: &SparseOperator<T>, rhs: &[T]) -> Result<Vec<T>> {
    SparseLu::new(op)?.solve(rhs)
}
