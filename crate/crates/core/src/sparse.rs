//! Compressed sparse row matrices with fixed sparsity, used as constant
//! operators (normalized adjacency, neighbor mean, context mean).

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists. Columns within a row are
    /// kept in the given order.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        offsets.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for row in &rows {
            for &(c, v) in row {
                if c >= cols {
                    return Err(Error::arg(format!("column {c} out of range {cols}")));
                }
                indices.push(c);
                values.push(v);
            }
            offsets.push(indices.len());
        }
        Ok(CsrMatrix {
            rows: rows.len(),
            cols,
            offsets,
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

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.offsets[r], self.offsets[r + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).1.iter().sum()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.cols {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // Row-major scan keeps each transposed row sorted by original row.
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = next[c];
                indices[slot] = r;
                values[slot] = v;
                next[c] += 1;
            }
        }
        CsrMatrix {
            rows: self.cols,
            cols: self.rows,
            offsets,
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out.set(r, c, out.get(r, c) + v);
            }
        }
        out
    }

    /// `self · dense`.
    pub fn spmm(&self, dense: &Tensor) -> Result<Tensor> {
        self.check(dense)?;
        let mut out = Tensor::zeros(self.rows, dense.cols());
        par::for_each_row(out.data_mut(), dense.cols(), |r, o| self.spmm_row(r, dense, o));
        Ok(out)
    }

    pub fn spmm_seq(&self, dense: &Tensor) -> Result<Tensor> {
        self.check(dense)?;
        let mut out = Tensor::zeros(self.rows, dense.cols());
        par::for_each_row_seq(out.data_mut(), dense.cols(), |r, o| {
            self.spmm_row(r, dense, o)
        });
        Ok(out)
    }

    #[cfg(feature = "parallel")]
    pub fn spmm_par(&self, dense: &Tensor) -> Result<Tensor> {
        self.check(dense)?;
        let mut out = Tensor::zeros(self.rows, dense.cols());
        par::for_each_row_par(out.data_mut(), dense.cols(), |r, o| {
            self.spmm_row(r, dense, o)
        });
        Ok(out)
    }

    fn check(&self, dense: &Tensor) -> Result<()> {
        if dense.rows() != self.cols {
            return Err(Error::arg(format!(
                "spmm shape mismatch: {}x{} (sparse) * {}x{}",
                self.rows,
                self.cols,
                dense.rows(),
                dense.cols()
            )));
        }
        Ok(())
    }

    #[inline]
    fn spmm_row(&self, r: usize, dense: &Tensor, out: &mut [f64]) {
        let (cols, vals) = self.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            for (o, &x) in out.iter_mut().zip(dense.row(c)) {
                *o += v * x;
            }
        }
    }
}

/// A constant sparse operator together with its transpose, so that both the
/// forward product and its adjoint are row-parallel gathers.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    pub forward: CsrMatrix,
    pub adjoint: CsrMatrix,
}

impl SparseOperator {
    pub fn new(forward: CsrMatrix) -> Self {
        let adjoint = forward.transpose();
        SparseOperator { forward, adjoint }
    }
}
