//! Compressed-row sparse matrices used as operator actions.

use nalgebra::DMatrix;

/// Row-compressed sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, value)` lists. Zero values are dropped.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n_rows = rows.len();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                assert!(c < n_cols, "column {c} out of range {n_cols}");
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                    continue;
                }
                if v != 0.0 {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseMatrix { n_rows, n_cols, row_ptr, cols, vals }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            *yi = c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum();
        }
    }

    /// `y = A x` for vectors embedded with a stride.
    pub fn apply_strided(&self, x: &[f64], xs: usize, y: &mut [f64], ys: usize) {
        for i in 0..self.n_rows {
            let (c, v) = self.row(i);
            y[i * ys] = c.iter().zip(v).map(|(&j, &a)| a * x[j * xs]).sum();
        }
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut rows = vec![Vec::new(); self.n_cols];
        for i in 0..self.n_rows {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                rows[j].push((i, a));
            }
        }
        SparseMatrix::from_rows(self.n_rows, rows)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                m[(i, j)] += a;
            }
        }
        m
    }

    pub fn from_dense(m: &DMatrix<f64>) -> SparseMatrix {
        let rows = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| (j, m[(i, j)])).collect())
            .collect();
        SparseMatrix::from_rows(m.ncols(), rows)
    }

    /// Applies the operator along the slow index of a row-major `n_rows x ny` array:
    /// `out[i, :] = sum_k A[i, k] u[k, :]`.
    pub fn apply_slow(&self, u: &[f64], out: &mut [f64], ny: usize) {
        for i in 0..self.n_rows {
            let o = &mut out[i * ny..(i + 1) * ny];
            o.fill(0.0);
            let (c, v) = self.row(i);
            for (&k, &a) in c.iter().zip(v) {
                let src = &u[k * ny..(k + 1) * ny];
                for (oj, sj) in o.iter_mut().zip(src) {
                    *oj += a * sj;
                }
            }
        }
    }

    /// Applies the operator along the fast index of a row-major `nx x n_cols` array.
    pub fn apply_fast(&self, u: &[f64], out: &mut [f64], nx: usize) {
        let ny = self.n_cols;
        for i in 0..nx {
            self.apply(&u[i * ny..(i + 1) * ny], &mut out[i * self.n_rows..(i + 1) * self.n_rows]);
        }
    }
}
