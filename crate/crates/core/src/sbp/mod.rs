//! Summation-by-parts operators: 1D norms and derivatives, the variable
//! coefficient second derivative, the 2D curvilinear block operator and
//! norm-compatible interpolation.

mod block;
mod interp;
mod sparse;
pub mod table;

pub use block::{BlockOperator, BlockWork, Side, SIDES};
pub use interp::InterpolationPair;
pub use sparse::SparseMatrix;

use crate::error::{Error, Result};
use table::OperatorTable;

/// Diagonal quadrature norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SbpNorm {
    pub weights: Vec<f64>,
    pub order: usize,
}

impl SbpNorm {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weighted inner product.
    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
    }

    /// Trapezoidal (second-order) norm on `n` points with spacing `h`.
    pub fn trapezoid(n: usize, h: f64) -> SbpNorm {
        let mut weights = vec![h; n];
        weights[0] = 0.5 * h;
        weights[n - 1] = 0.5 * h;
        SbpNorm { weights, order: 2 }
    }
}

/// Undivided-difference remainder `R(c) = (beta/h) Dq^T diag(cbar) Dq`.
#[derive(Debug, Clone)]
pub struct Remainder {
    beta_over_h: f64,
    coefs: Vec<f64>,
}

impl Remainder {
    fn new(order: usize, h: f64) -> Remainder {
        let q = order / 2 + 1;
        let beta = match order {
            2 => 1.0 / 4.0,
            4 => 1.0 / 18.0,
            _ => 1.0 / 80.0,
        };
        let mut coefs = vec![1.0];
        for _ in 0..q {
            let mut next = vec![0.0; coefs.len() + 1];
            for (l, c) in coefs.iter().enumerate() {
                next[l + 1] += c;
                next[l] -= c;
            }
            coefs = next;
        }
        Remainder { beta_over_h: beta / h, coefs }
    }

    /// Adds `scale * R(c) u` to `out`, all lines accessed with the given strides.
    #[allow(clippy::too_many_arguments)]
    pub fn add_apply(&self, n: usize, c: &[f64], u: &[f64], out: &mut [f64], stride: usize, scale: f64) {
        let w = self.coefs.len();
        let s = scale * self.beta_over_h / w as f64;
        for k in 0..=n - w {
            let mut d = 0.0;
            let mut cs = 0.0;
            for (l, a) in self.coefs.iter().enumerate() {
                d += a * u[(k + l) * stride];
                cs += c[(k + l) * stride];
            }
            let t = s * cs * d;
            for (l, a) in self.coefs.iter().enumerate() {
                out[(k + l) * stride] += a * t;
            }
        }
    }

    /// `u^T R(c) u` along one line.
    pub fn quadratic(&self, n: usize, c: &[f64], u: &[f64], stride: usize) -> f64 {
        let w = self.coefs.len();
        let mut acc = 0.0;
        for k in 0..=n - w {
            let mut d = 0.0;
            let mut cs = 0.0;
            for (l, a) in self.coefs.iter().enumerate() {
                d += a * u[(k + l) * stride];
                cs += c[(k + l) * stride];
            }
            acc += cs * d * d;
        }
        acc * self.beta_over_h / w as f64
    }
}

/// One-dimensional diagonal-norm SBP operators on a uniform grid.
#[derive(Debug, Clone)]
pub struct Sbp1d {
    pub n: usize,
    pub spacing: f64,
    pub order: usize,
    pub norm: SbpNorm,
    pub d1: SparseMatrix,
    pub d1t: SparseMatrix,
    pub remainder: Option<Remainder>,
}

impl Sbp1d {
    /// Traditional operator of order 2, 4 or 6 with the default (wide) second derivative.
    pub fn new(n: usize, spacing: f64, order: usize) -> Result<Sbp1d> {
        let table = match order {
            2 | 4 | 6 => table::builtin(order)?,
            _ => return Err(Error::UnsupportedOrder(order)),
        };
        Sbp1d::from_table(&table, n, spacing)
    }

    pub fn from_table(table: &OperatorTable, n: usize, spacing: f64) -> Result<Sbp1d> {
        if !(spacing > 0.0) {
            return Err(Error::InvalidArgument(format!("spacing must be positive, got {spacing}")));
        }
        let r = table.norm.len();
        let width = table.closure_width();
        let min = (2 * r).max(width + 1).max(2);
        if n < min {
            return Err(Error::GridTooSmall { n, order: table.order, min });
        }
        let inv_h = 1.0 / spacing;
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for i in 0..n {
            let row = if i < r {
                table.closure[i].iter().enumerate().map(|(j, &c)| (j, c * inv_h)).collect()
            } else if i >= n - r {
                let m = n - 1 - i;
                table.closure[m].iter().enumerate().map(|(j, &c)| (n - 1 - j, -c * inv_h)).collect()
            } else {
                let k = table.half_width() as isize;
                (-k..=k)
                    .filter(|&o| o != 0)
                    .map(|o| ((i as isize + o) as usize, table.stencil(o) * inv_h))
                    .collect()
            };
            rows.push(row);
        }
        let d1 = SparseMatrix::from_rows(n, rows);
        let d1t = d1.transpose();
        let mut weights = vec![spacing; n];
        for (i, w) in table.norm.iter().enumerate() {
            weights[i] = w * spacing;
            weights[n - 1 - i] = w * spacing;
        }
        Ok(Sbp1d {
            n,
            spacing,
            order: table.order,
            norm: SbpNorm { weights, order: table.order },
            d1,
            d1t,
            remainder: None,
        })
    }

    /// Enables the narrow-stencil remainder in the second derivative.
    pub fn with_remainder(mut self, on: bool) -> Sbp1d {
        self.remainder = if on { Some(Remainder::new(self.order, self.spacing)) } else { None };
        self
    }

    /// Boundary derivative rows used by the traction operator.
    pub fn boundary_row(&self, right: bool) -> (&[usize], &[f64]) {
        self.d1.row(if right { self.n - 1 } else { 0 })
    }

    /// `D2(c) u` for the 1D variable-coefficient second derivative.
    pub fn d2_apply(&self, c: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        if let Some((index, &value)) = c.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::NonPositiveCoefficient { index, value });
        }
        let n = self.n;
        let mut du = vec![0.0; n];
        self.d1.apply(u, &mut du);
        for (d, ci) in du.iter_mut().zip(c) {
            *d *= ci;
        }
        self.d1.apply(&du, out);
        if let Some(rem) = &self.remainder {
            let mut ru = vec![0.0; n];
            rem.add_apply(n, c, u, &mut ru, 1, 1.0);
            for (o, (r, w)) in out.iter_mut().zip(ru.iter().zip(&self.norm.weights)) {
                *o -= r / w;
            }
        }
        Ok(())
    }

    /// Assembled `D2(c)`.
    pub fn d2_matrix(&self, c: &[f64]) -> Result<nalgebra::DMatrix<f64>> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        let mut e = vec![0.0; self.n];
        let mut col = vec![0.0; self.n];
        for j in 0..self.n {
            e.fill(0.0);
            e[j] = 1.0;
            self.d2_apply(c, &e, &mut col)?;
            for i in 0..self.n {
                m[(i, j)] = col[i];
            }
        }
        Ok(m)
    }

    /// Assembled remainder `R(c)` (zero when disabled).
    pub fn remainder_matrix(&self, c: &[f64]) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        if let Some(rem) = &self.remainder {
            let mut e = vec![0.0; self.n];
            let mut col = vec![0.0; self.n];
            for j in 0..self.n {
                e.fill(0.0);
                e[j] = 1.0;
                col.fill(0.0);
                rem.add_apply(self.n, c, &e, &mut col, 1, 1.0);
                for i in 0..self.n {
                    m[(i, j)] = col[i];
                }
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn grid(n: usize, h: f64) -> Vec<f64> {
        (0..n).map(|i| i as f64 * h).collect()
    }

    #[test]
    fn order2_norm() {
        let op = Sbp1d::new(5, 1.0, 2).unwrap();
        assert_eq!(op.norm.weights, vec![0.5, 1.0, 1.0, 1.0, 0.5]);
    }

    #[test]
    fn sbp_property_all_orders() {
        for order in [2, 4, 6] {
            let n = 23;
            let h = 0.1;
            let op = Sbp1d::new(n, h, order).unwrap();
            let hm = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(op.norm.weights.clone()));
            let d = op.d1.to_dense();
            let q = &hm * &d + d.transpose() * &hm;
            for i in 0..n {
                for j in 0..n {
                    let b = if i == j && i == 0 {
                        -1.0
                    } else if i == j && i == n - 1 {
                        1.0
                    } else {
                        0.0
                    };
                    assert!((q[(i, j)] - b).abs() < 1e-13, "order {order} ({i},{j}) {}", q[(i, j)]);
                }
            }
            let sum: f64 = op.norm.weights.iter().sum();
            assert!((sum - (n - 1) as f64 * h).abs() < 1e-12 * sum);
        }
    }

    #[test]
    fn d1_polynomial_exactness() {
        for order in [2, 4, 6] {
            let n = 31;
            let h = 0.05;
            let op = Sbp1d::new(n, h, order).unwrap();
            let x = grid(n, h);
            let r = table::builtin(order).unwrap().norm.len();
            for deg in 0..=order {
                let u: Vec<f64> = x.iter().map(|&x| (x - 0.3).powi(deg as i32)).collect();
                let mut du = vec![0.0; n];
                op.d1.apply(&u, &mut du);
                for i in 0..n {
                    let boundary = i < r || i >= n - r;
                    if boundary && deg > order / 2 {
                        continue;
                    }
                    let want = if deg == 0 { 0.0 } else { deg as f64 * (x[i] - 0.3).powi(deg as i32 - 1) };
                    assert!((du[i] - want).abs() < 1e-10, "order {order} deg {deg} i {i}: {} vs {want}", du[i]);
                }
            }
        }
    }

    #[test]
    fn quadrature_exactness() {
        for order in [2, 4, 6] {
            let n = 41;
            let h = 1.0 / 40.0;
            let op = Sbp1d::new(n, h, order).unwrap();
            let x = grid(n, h);
            for deg in 0..order {
                let f: Vec<f64> = x.iter().map(|x| x.powi(deg as i32)).collect();
                let ones = vec![1.0; n];
                let q = op.norm.dot(&f, &ones);
                assert!((q - 1.0 / (deg as f64 + 1.0)).abs() < 1e-12, "order {order} deg {deg}");
            }
        }
    }

    #[test]
    fn d2_exactness_and_coefficients() {
        let n = 41;
        let h = 1.0 / 40.0;
        let x = grid(n, h);
        for order in [2, 4, 6] {
            for rem in [false, true] {
                let op = Sbp1d::new(n, h, order).unwrap().with_remainder(rem);
                let ones = vec![1.0; n];
                let u: Vec<f64> = x.iter().map(|x| x * x).collect();
                let mut out = vec![0.0; n];
                op.d2_apply(&ones, &u, &mut out).unwrap();
                for v in &out[12..n - 12] {
                    assert!((v - 2.0).abs() < 1e-9, "order {order} {v}");
                }
                let lin: Vec<f64> = x.clone();
                op.d2_apply(&ones, &lin, &mut out).unwrap();
                assert!(out.iter().all(|v| v.abs() < 1e-10));
                let c: Vec<f64> = x.iter().map(|x| x + 1.0).collect();
                op.d2_apply(&c, &lin, &mut out).unwrap();
                for v in &out[12..n - 12] {
                    assert!((v - 1.0).abs() < 1e-9, "order {order}: {v}");
                }
            }
        }
        let op = Sbp1d::new(n, h, 4).unwrap();
        let mut c = vec![1.0; n];
        c[3] = 0.0;
        assert!(op.d2_apply(&c, &x, &mut vec![0.0; n]).is_err());
    }

    #[test]
    fn remainder_is_symmetric_psd() {
        let n = 30;
        let h = 0.1;
        for order in [2, 4, 6] {
            let op = Sbp1d::new(n, h, order).unwrap().with_remainder(true);
            let c: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * (i as f64 * 0.7).sin()).collect();
            let r = op.remainder_matrix(&c);
            assert!((&r - r.transpose()).amax() < 1e-12 * r.amax());
            let eig = r.clone().symmetric_eigen();
            assert!(eig.eigenvalues.min() >= -1e-10 * r.amax());
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(Sbp1d::new(10, 0.1, 8), Err(Error::UnsupportedOrder(8))));
        assert!(matches!(Sbp1d::new(5, 0.1, 4), Err(Error::GridTooSmall { .. })));
        assert!(Sbp1d::new(10, 0.0, 2).is_err());
    }

    proptest! {
        #[test]
        fn d1_annihilates_constants(n in 12usize..60, c in -1e3f64..1e3, order in prop::sample::select(vec![2usize, 4, 6])) {
            let op = Sbp1d::new(n, 0.37, order).unwrap();
            let u = vec![c; n];
            let mut du = vec![0.0; n];
            op.d1.apply(&u, &mut du);
            prop_assert!(du.iter().all(|v| v.abs() <= 1e-14 * c.abs().max(1.0) / 0.37 * 10.0));
        }
    }
}
