//! Coarse/fine interpolation pairs that are adjoint under the grid norms.

use super::{SbpNorm, SparseMatrix};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// `f2c = H_c^{-1} c2f^T H_f`.
#[derive(Debug, Clone)]
pub struct InterpolationPair {
    pub c2f: SparseMatrix,
    c2f_t: SparseMatrix,
    pub f2c: SparseMatrix,
    pub coarse_norm: SbpNorm,
    pub fine_norm: SbpNorm,
    pub interval: (f64, f64),
}

fn nodes(interval: (f64, f64), n: usize) -> Vec<f64> {
    (0..n).map(|i| interval.0 + (interval.1 - interval.0) * i as f64 / (n - 1) as f64).collect()
}

impl InterpolationPair {
    /// Passthrough pair for equal grids.
    pub fn identity(interval: (f64, f64), norm: SbpNorm) -> InterpolationPair {
        let n = norm.len();
        let eye = SparseMatrix::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect());
        InterpolationPair { c2f: eye.clone(), c2f_t: eye.clone(), f2c: eye, coarse_norm: norm.clone(), fine_norm: norm, interval }
    }

    /// Plain piecewise-linear interpolation with its norm-adjoint restriction.
    pub fn linear(interval: (f64, f64), coarse_norm: SbpNorm, fine_norm: SbpNorm) -> Result<InterpolationPair> {
        let (dense, _, _) = Self::linear_dense(interval, &coarse_norm, &fine_norm)?;
        Ok(Self::assemble(dense, coarse_norm, fine_norm, interval))
    }

    /// Piecewise-linear coarse-to-fine interpolation plus the minimum-norm
    /// banded correction that makes the norm-adjoint fine-to-coarse operator
    /// exact on constants and linears while keeping the coarse-to-fine
    /// operator exact on them. Both norms must integrate quadratics
    /// identically, which rules out the trapezoidal coarse norm.
    pub fn build(interval: (f64, f64), coarse_norm: SbpNorm, fine_norm: SbpNorm) -> Result<InterpolationPair> {
        let (mut dense, xc, xf) = Self::linear_dense(interval, &coarse_norm, &fine_norm)?;
        let (nc, nf) = (xc.len(), xf.len());
        let hc = (interval.1 - interval.0) / (nc - 1) as f64;
        let wf = &fine_norm.weights;
        let wc = &coarse_norm.weights;
        let mut unknowns = Vec::new();
        for (f, &x) in xf.iter().enumerate() {
            let k0 = (((x - interval.0) / hc).floor() as isize).min(nc as isize - 2);
            for k in (k0 - 1).max(0)..=(k0 + 2).min(nc as isize - 1) {
                unknowns.push((f, k as usize));
            }
        }
        // Constraint rows: per fine row (sum, first moment), per coarse column (sum, first moment).
        let n_con = 2 * nf + 2 * nc;
        let mut a_cols: Vec<[(usize, f64); 4]> = Vec::with_capacity(unknowns.len());
        for &(f, k) in &unknowns {
            a_cols.push([
                (2 * f, 1.0),
                (2 * f + 1, (xc[k] - xf[f]) / hc),
                (2 * nf + 2 * k, wf[f] / hc),
                (2 * nf + 2 * k + 1, wf[f] * (xf[f] - xc[k]) / (hc * hc)),
            ]);
        }
        let mut b = DVector::<f64>::zeros(n_con);
        for k in 0..nc {
            let mut r0 = wc[k];
            let mut r1 = 0.0;
            for f in 0..nf {
                r0 -= wf[f] * dense[(f, k)];
                r1 -= wf[f] * dense[(f, k)] * (xf[f] - xc[k]) / hc;
            }
            b[2 * nf + 2 * k] = r0 / hc;
            b[2 * nf + 2 * k + 1] = r1 / hc;
        }
        let mut gram = DMatrix::<f64>::zeros(n_con, n_con);
        for col in &a_cols {
            for &(i, vi) in col {
                for &(j, vj) in col {
                    gram[(i, j)] += vi * vj;
                }
            }
        }
        let apply_at = |y: &DVector<f64>| -> Vec<f64> {
            a_cols.iter().map(|col| col.iter().map(|&(i, v)| v * y[i]).sum()).collect()
        };
        let apply_a = |d: &[f64]| -> DVector<f64> {
            let mut out = DVector::zeros(n_con);
            for (col, &dv) in a_cols.iter().zip(d) {
                for &(i, v) in col {
                    out[i] += v * dv;
                }
            }
            out
        };
        let eps = 1e-13 * gram.diagonal().amax();
        let mut reg = gram.clone();
        for i in 0..n_con {
            reg[(i, i)] += eps;
        }
        let chol = reg
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("interpolation constraint system is not positive".into()))?;
        let mut y = chol.solve(&b);
        for _ in 0..3 {
            let r = &b - &gram * &y;
            y += chol.solve(&r);
        }
        let delta = apply_at(&y);
        let resid = (apply_a(&delta) - &b).amax();
        if resid > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "no norm-compatible interpolation for {nc} -> {nf} points (residual {resid:e}); \
                 the coarse and fine norms must integrate quadratics identically"
            )));
        }
        for (u, &(f, k)) in unknowns.iter().enumerate() {
            dense[(f, k)] += delta[u];
        }
        Ok(Self::assemble(dense, coarse_norm, fine_norm, interval))
    }

    fn linear_dense(
        interval: (f64, f64),
        coarse_norm: &SbpNorm,
        fine_norm: &SbpNorm,
    ) -> Result<(DMatrix<f64>, Vec<f64>, Vec<f64>)> {
        let nc = coarse_norm.len();
        let nf = fine_norm.len();
        if nc < 2 || nf < nc {
            return Err(Error::InvalidArgument(format!("need 2 <= coarse ({nc}) <= fine ({nf})")));
        }
        let lc: f64 = coarse_norm.weights.iter().sum();
        let lf: f64 = fine_norm.weights.iter().sum();
        let len = interval.1 - interval.0;
        if (lc - len).abs() > 1e-12 * len || (lf - len).abs() > 1e-12 * len {
            return Err(Error::IncompatibleIntervals(interval.0, interval.0 + lc, interval.0, interval.0 + lf));
        }
        let xc = nodes(interval, nc);
        let xf = nodes(interval, nf);
        let hc = len / (nc - 1) as f64;
        let mut dense = DMatrix::<f64>::zeros(nf, nc);
        for (f, &x) in xf.iter().enumerate() {
            let t = (x - interval.0) / hc;
            let k = (t.floor() as usize).min(nc - 2);
            let s = t - k as f64;
            dense[(f, k)] += 1.0 - s;
            dense[(f, k + 1)] += s;
        }
        Ok((dense, xc, xf))
    }

    fn assemble(dense: DMatrix<f64>, coarse_norm: SbpNorm, fine_norm: SbpNorm, interval: (f64, f64)) -> InterpolationPair {
        let (nf, nc) = dense.shape();
        let mut f2c = DMatrix::<f64>::zeros(nc, nf);
        for k in 0..nc {
            for f in 0..nf {
                f2c[(k, f)] = dense[(f, k)] * fine_norm.weights[f] / coarse_norm.weights[k];
            }
        }
        let prune = |m: &DMatrix<f64>| {
            let tol = 1e-16 * m.amax();
            SparseMatrix::from_dense(&m.map(|v| if v.abs() < tol { 0.0 } else { v }))
        };
        let c2f = prune(&dense);
        let c2f_t = c2f.transpose();
        InterpolationPair { c2f, c2f_t, f2c: prune(&f2c), coarse_norm, fine_norm, interval }
    }

    pub fn coarse_len(&self) -> usize {
        self.coarse_norm.len()
    }

    pub fn fine_len(&self) -> usize {
        self.fine_norm.len()
    }

    pub fn to_fine(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.fine_len()];
        self.c2f.apply(p, &mut out);
        out
    }

    pub fn to_coarse(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.coarse_len()];
        self.f2c.apply(w, &mut out);
        out
    }

    /// Chain rule for a derivative with respect to fine values: `c2f^T g`.
    pub fn pull_back(&self, g_fine: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.coarse_len()];
        self.c2f_t.apply(g_fine, &mut out);
        out
    }

    pub fn coarse_nodes(&self) -> Vec<f64> {
        nodes(self.interval, self.coarse_len())
    }

    pub fn fine_nodes(&self) -> Vec<f64> {
        nodes(self.interval, self.fine_len())
    }
}
