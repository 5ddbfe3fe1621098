use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

/// Compressed sparse row structure shared by all matrices on one dof set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrPattern {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl CsrPattern {
    /// Build from per-row neighbour lists; columns are sorted and deduplicated.
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Self {
        let dim = rows.len();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut cols in rows {
            cols.sort_unstable();
            cols.dedup();
            col_idx.extend(cols);
            row_ptr.push(col_idx.len());
        }
        Self {
            dim,
            row_ptr,
            col_idx,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    /// Position of `(i, j)` in the value array.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.row(i).binary_search(&j).ok().map(|k| start + k)
    }

    /// Largest `|i - j|` over the stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.dim)
            .flat_map(|i| self.row(i).iter().map(move |&j| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }
}

/// Sparse matrix over a shared [`CsrPattern`]. Matrices on the same dof set
/// share the pattern so linear combinations are plain value-array operations.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pattern: Arc<CsrPattern>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(pattern: Arc<CsrPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    pub fn identity(pattern: Arc<CsrPattern>) -> Self {
        let mut m = Self::zeros(pattern);
        for i in 0..m.dim() {
            let p = m.pattern.position(i, i).expect("pattern lacks diagonal");
            m.values[p] = 1.0;
        }
        m
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.position(i, j).map_or(0.0, |p| self.values[p])
    }

    pub(crate) fn add_at(&mut self, i: usize, j: usize, v: f64) {
        let p = self
            .pattern
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside sparsity pattern"));
        self.values[p] += v;
    }

    fn same_pattern(&self, other: &SparseMatrix) -> Result<()> {
        if Arc::ptr_eq(&self.pattern, &other.pattern) || *self.pattern == *other.pattern {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: self.pattern.nnz(),
                got: other.pattern.nnz(),
            })
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &SparseMatrix) -> Result<()> {
        self.same_pattern(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scaled(&self, scale: f64) -> SparseMatrix {
        SparseMatrix {
            pattern: self.pattern.clone(),
            values: self.values.iter().map(|v| v * scale).collect(),
        }
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let range = self.pattern.row_range(i);
            let cols = &self.pattern.col_idx[range.clone()];
            let vals = &self.values[range];
            *yi = cols.iter().zip(vals).map(|(&j, &a)| a * x[j]).sum();
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dim(), "matrix-vector dimension mismatch");
        let mut y = DVector::zeros(self.dim());
        self.mul_vec_into(x.as_slice(), y.as_mut_slice());
        y
    }

    pub fn try_mul_vec(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.dim(), x.len())?;
        Ok(self.mul_vec(x))
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&self.mul_vec(y))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            for (k, &j) in self.pattern.row(i).iter().enumerate() {
                let a = self.values[self.pattern.row_ptr[i] + k];
                worst = worst.max((a - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.dim(), self.dim());
        for i in 0..self.dim() {
            for (k, &j) in self.pattern.row(i).iter().enumerate() {
                d[(i, j)] = self.values[self.pattern.row_ptr[i] + k];
            }
        }
        d
    }

    pub fn diagonal(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), (0..self.dim()).map(|i| self.get(i, i)))
    }

    /// Row sums of the matrix.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.values[self.pattern.row_range(i)].iter().sum())
            .collect()
    }
}
