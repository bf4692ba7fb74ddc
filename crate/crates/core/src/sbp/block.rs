//! Variable-coefficient curvilinear Laplacian on one logically rectangular block.

use super::Sbp1d;
use crate::error::{Error, Result};
use crate::geometry::BlockGeometry;

/// Block edge. `Xi*` edges run along `j`, `Eta*` edges along `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    XiMin,
    XiMax,
    EtaMin,
    EtaMax,
}

pub const SIDES: [Side; 4] = [Side::XiMin, Side::XiMax, Side::EtaMin, Side::EtaMax];

impl Side {
    pub fn index(self) -> usize {
        self as usize
    }

    fn sign(self) -> f64 {
        match self {
            Side::XiMin | Side::EtaMin => -1.0,
            Side::XiMax | Side::EtaMax => 1.0,
        }
    }
}

/// Per-edge data: node indices, surface quadrature and penalty.
#[derive(Debug, Clone)]
pub struct Edge {
    pub side: Side,
    pub nodes: Vec<usize>,
    /// Reference-coordinate quadrature along the edge.
    pub hq: Vec<f64>,
    /// Arc length per unit reference coordinate.
    pub s: Vec<f64>,
    /// Surface quadrature `hq * s`.
    pub m: Vec<f64>,
    /// Dirichlet penalty in MPa/m.
    pub gamma: Vec<f64>,
}

impl Edge {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Scratch arrays for one block.
#[derive(Debug, Clone)]
pub struct BlockWork {
    pub dxi: Vec<f64>,
    pub deta: Vec<f64>,
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
    tmp: Vec<f64>,
    tmp2: Vec<f64>,
}

/// `H_vol D2 u = -S u + sum_edges e M T u` with `S` symmetric positive semi-definite.
#[derive(Debug, Clone)]
pub struct BlockOperator {
    pub nx: usize,
    pub ny: usize,
    pub ox: Sbp1d,
    pub oy: Sbp1d,
    pub c11: Vec<f64>,
    pub c12: Vec<f64>,
    pub c22: Vec<f64>,
    /// Reference quadrature `H_xi (x) H_eta`.
    pub hw: Vec<f64>,
    /// Physical volume quadrature `J hw`.
    pub hvol: Vec<f64>,
    pub edges: Vec<Edge>,
}

impl BlockOperator {
    pub fn new(
        geom: &BlockGeometry,
        mu: &[f64],
        order: usize,
        remainder: bool,
        gamma_factor: f64,
    ) -> Result<BlockOperator> {
        let (nx, ny) = (geom.nx, geom.ny);
        let n = nx * ny;
        if mu.len() != n {
            return Err(Error::InvalidArgument(format!("coefficient has {} entries, grid has {n}", mu.len())));
        }
        if let Some((index, &value)) = mu.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::NonPositiveCoefficient { index, value });
        }
        let ox = Sbp1d::new(nx, 1.0 / (nx - 1) as f64, order)?.with_remainder(remainder);
        let oy = Sbp1d::new(ny, 1.0 / (ny - 1) as f64, order)?.with_remainder(remainder);
        let mut c11 = vec![0.0; n];
        let mut c12 = vec![0.0; n];
        let mut c22 = vec![0.0; n];
        let mut hw = vec![0.0; n];
        let mut hvol = vec![0.0; n];
        for i in 0..nx {
            for j in 0..ny {
                let k = i * ny + j;
                let mj = mu[k] * geom.jacobian[k];
                c11[k] = mj * geom.a11[k];
                c12[k] = mj * geom.a12[k];
                c22[k] = mj * geom.a22[k];
                hw[k] = ox.norm.weights[i] * oy.norm.weights[j];
                hvol[k] = hw[k] * geom.jacobian[k];
            }
        }
        let w0x = ox.norm.weights[0];
        let w0y = oy.norm.weights[0];
        let mut edges = Vec::with_capacity(4);
        for side in SIDES {
            let nodes: Vec<usize> = match side {
                Side::XiMin => (0..ny).collect(),
                Side::XiMax => (0..ny).map(|j| (nx - 1) * ny + j).collect(),
                Side::EtaMin => (0..nx).map(|i| i * ny).collect(),
                Side::EtaMax => (0..nx).map(|i| i * ny + ny - 1).collect(),
            };
            let xi_side = matches!(side, Side::XiMin | Side::XiMax);
            let hq = if xi_side { oy.norm.weights.clone() } else { ox.norm.weights.clone() };
            let s: Vec<f64> = nodes
                .iter()
                .map(|&k| if xi_side { geom.x_eta[k].hypot(geom.y_eta[k]) } else { geom.x_xi[k].hypot(geom.y_xi[k]) })
                .collect();
            let m = hq.iter().zip(&s).map(|(a, b)| a * b).collect();
            let gamma = nodes
                .iter()
                .zip(&s)
                .map(|(&k, &sk)| {
                    if xi_side {
                        gamma_factor * c11[k] / (sk * w0x)
                    } else {
                        gamma_factor * c22[k] / (sk * w0y)
                    }
                })
                .collect();
            edges.push(Edge { side, nodes, hq, s, m, gamma });
        }
        Ok(BlockOperator { nx, ny, ox, oy, c11, c12, c22, hw, hvol, edges })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn edge(&self, side: Side) -> &Edge {
        &self.edges[side.index()]
    }

    pub fn workspace(&self) -> BlockWork {
        let n = self.len();
        BlockWork {
            dxi: vec![0.0; n],
            deta: vec![0.0; n],
            fx: vec![0.0; n],
            fy: vec![0.0; n],
            tmp: vec![0.0; n],
            tmp2: vec![0.0; n],
        }
    }

    /// Reference derivatives and contravariant fluxes of `u`.
    pub fn fluxes(&self, u: &[f64], w: &mut BlockWork) {
        self.ox.d1.apply_slow(u, &mut w.dxi, self.ny);
        self.oy.d1.apply_fast(u, &mut w.deta, self.nx);
        for k in 0..self.len() {
            w.fx[k] = self.c11[k] * w.dxi[k] + self.c12[k] * w.deta[k];
            w.fy[k] = self.c12[k] * w.dxi[k] + self.c22[k] * w.deta[k];
        }
    }

    /// `out = -S u`; requires [`Self::fluxes`] on the same `u`.
    pub fn neg_stiffness(&self, u: &[f64], w: &mut BlockWork, out: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        for k in 0..self.len() {
            w.tmp[k] = self.hw[k] * w.fx[k];
        }
        self.ox.d1t.apply_slow(&w.tmp, out, ny);
        for k in 0..self.len() {
            w.tmp[k] = self.hw[k] * w.fy[k];
        }
        self.oy.d1t.apply_fast(&w.tmp, &mut w.tmp2, nx);
        for k in 0..self.len() {
            out[k] = -out[k] - w.tmp2[k];
        }
        if let Some(rem) = &self.ox.remainder {
            for j in 0..ny {
                let hj = self.oy.norm.weights[j];
                rem.add_apply(nx, &self.c11[j..], &u[j..], &mut out[j..], ny, -hj);
            }
        }
        if let Some(rem) = &self.oy.remainder {
            for i in 0..nx {
                let hi = self.ox.norm.weights[i];
                let r = i * ny..(i + 1) * ny;
                rem.add_apply(ny, &self.c22[r.clone()], &u[r.clone()], &mut out[r], 1, -hi);
            }
        }
    }

    /// `u^T S u`; requires [`Self::fluxes`] on the same `u`.
    pub fn stiffness_energy(&self, u: &[f64], w: &BlockWork) -> f64 {
        let mut e = 0.0;
        for k in 0..self.len() {
            e += self.hw[k] * (w.dxi[k] * w.fx[k] + w.deta[k] * w.fy[k]);
        }
        if let Some(rem) = &self.ox.remainder {
            for j in 0..self.ny {
                e += self.oy.norm.weights[j] * rem.quadratic(self.nx, &self.c11[j..], &u[j..], self.ny);
            }
        }
        if let Some(rem) = &self.oy.remainder {
            for i in 0..self.nx {
                let r = i * self.ny..(i + 1) * self.ny;
                e += self.ox.norm.weights[i] * rem.quadratic(self.ny, &self.c22[r.clone()], &u[r], 1);
            }
        }
        e
    }

    /// Traction `T u` along an edge; requires [`Self::fluxes`].
    pub fn traction(&self, side: Side, w: &BlockWork, out: &mut [f64]) {
        let e = self.edge(side);
        let f = match side {
            Side::XiMin | Side::XiMax => &w.fx,
            Side::EtaMin | Side::EtaMax => &w.fy,
        };
        let sg = side.sign();
        for (o, (&k, &s)) in out.iter_mut().zip(e.nodes.iter().zip(&e.s)) {
            *o = sg * f[k] / s;
        }
    }

    /// `out += T^T g` for an edge function `g`.
    pub fn add_traction_transpose(&self, side: Side, g: &[f64], out: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        let e = self.edge(side);
        let sg = side.sign();
        match side {
            Side::XiMin | Side::XiMax => {
                let ib = if side == Side::XiMax { nx - 1 } else { 0 };
                let (cols, vals) = self.ox.d1.row(ib);
                let mut z = vec![0.0; ny];
                for j in 0..ny {
                    let k = ib * ny + j;
                    let gs = sg * g[j] / e.s[j];
                    let a = self.c11[k] * gs;
                    for (&c, &d) in cols.iter().zip(vals) {
                        out[c * ny + j] += d * a;
                    }
                    z[j] = self.c12[k] * gs;
                }
                for l in 0..ny {
                    let (cols, vals) = self.oy.d1t.row(l);
                    out[ib * ny + l] += cols.iter().zip(vals).map(|(&c, &d)| d * z[c]).sum::<f64>();
                }
            }
            Side::EtaMin | Side::EtaMax => {
                let jb = if side == Side::EtaMax { ny - 1 } else { 0 };
                let (cols, vals) = self.oy.d1.row(jb);
                let mut z = vec![0.0; nx];
                for i in 0..nx {
                    let k = i * ny + jb;
                    let gs = sg * g[i] / e.s[i];
                    let a = self.c22[k] * gs;
                    for (&c, &d) in cols.iter().zip(vals) {
                        out[i * ny + c] += d * a;
                    }
                    z[i] = self.c12[k] * gs;
                }
                for kx in 0..nx {
                    let (cols, vals) = self.ox.d1t.row(kx);
                    out[kx * ny + jb] += cols.iter().zip(vals).map(|(&c, &d)| d * z[c]).sum::<f64>();
                }
            }
        }
    }

    /// Restriction `e^T f` to an edge.
    pub fn restrict(&self, side: Side, f: &[f64], out: &mut [f64]) {
        for (o, &k) in out.iter_mut().zip(&self.edge(side).nodes) {
            *o = f[k];
        }
    }

    /// `out += e vals`.
    pub fn add_lift(&self, side: Side, vals: &[f64], out: &mut [f64]) {
        for (v, &k) in vals.iter().zip(&self.edge(side).nodes) {
            out[k] += v;
        }
    }

    /// Second derivative `H_vol^{-1} (-S u + sum e M T u)`.
    pub fn apply_d2(&self, u: &[f64], out: &mut [f64]) {
        let mut w = self.workspace();
        self.fluxes(u, &mut w);
        self.neg_stiffness(u, &mut w, out);
        for side in SIDES {
            let e = self.edge(side);
            let mut t = vec![0.0; e.len()];
            self.traction(side, &w, &mut t);
            for (ti, mi) in t.iter_mut().zip(&e.m) {
                *ti *= mi;
            }
            self.add_lift(side, &t, out);
        }
        for (o, h) in out.iter_mut().zip(&self.hvol) {
            *o /= h;
        }
    }

    /// Assembled `S` (small grids only).
    pub fn stiffness_matrix(&self) -> nalgebra::DMatrix<f64> {
        let n = self.len();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        let mut w = self.workspace();
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e.fill(0.0);
            e[j] = 1.0;
            self.fluxes(&e, &mut w);
            self.neg_stiffness(&e, &mut w, &mut col);
            for i in 0..n {
                m[(i, j)] = -col[i];
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, make_fractal_profile, Domain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn skewed(nx: usize, ny: usize, order: usize) -> BlockGeometry {
        let mut x = vec![0.0; nx * ny];
        let mut y = vec![0.0; nx * ny];
        for i in 0..nx {
            for j in 0..ny {
                let (s, t) = (i as f64 / (nx - 1) as f64, j as f64 / (ny - 1) as f64);
                x[i * ny + j] = 2.0 * s + 0.1 * (3.0 * t).sin();
                y[i * ny + j] = 1.5 * t + 0.15 * (2.0 * s).sin() * (1.0 + t);
            }
        }
        BlockGeometry::from_coordinates(nx, ny, x, y, order).unwrap()
    }

    #[test]
    fn traction_transpose_matches_assembly() {
        let g = skewed(13, 14, 4);
        let mu: Vec<f64> = (0..g.x.len()).map(|k| 1.0 + 0.3 * (k as f64).sin().abs()).collect();
        let op = BlockOperator::new(&g, &mu, 4, true, 2.5).unwrap();
        let n = op.len();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for side in SIDES {
            let len = op.edge(side).len();
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let gv: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut w = op.workspace();
            op.fluxes(&u, &mut w);
            let mut tu = vec![0.0; len];
            op.traction(side, &w, &mut tu);
            let mut ttg = vec![0.0; n];
            op.add_traction_transpose(side, &gv, &mut ttg);
            let lhs: f64 = gv.iter().zip(&tu).map(|(a, b)| a * b).sum();
            let rhs: f64 = u.iter().zip(&ttg).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0), "{side:?}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn stiffness_symmetric_psd_and_energy() {
        for rem in [false, true] {
            let g = skewed(12, 12, 4);
            let mu = vec![2.0; g.x.len()];
            let op = BlockOperator::new(&g, &mu, 4, rem, 2.5).unwrap();
            let s = op.stiffness_matrix();
            assert!((&s - s.transpose()).amax() < 1e-11 * s.amax());
            let eig = s.clone().symmetric_eigen();
            assert!(eig.eigenvalues.min() > -1e-10 * s.amax());
            let u: Vec<f64> = (0..op.len()).map(|k| (k as f64 * 0.37).cos()).collect();
            let mut w = op.workspace();
            op.fluxes(&u, &mut w);
            let uv = nalgebra::DVector::from_vec(u.clone());
            let want = uv.dot(&(&s * &uv));
            assert!((op.stiffness_energy(&u, &w) - want).abs() < 1e-10 * want);
        }
    }

    #[test]
    fn freestream_on_curved_grid() {
        let p = make_fractal_profile(81, (-15.0, 15.0), 0.01, (4.0, 30.0), 5, 4).unwrap();
        let d = Domain { x_min: -15.0, x_max: 15.0, y_min: -15.0, y_max: 15.0 };
        let grid = build_grid(&p, d, 41).unwrap();
        for b in &grid.blocks {
            let op = BlockOperator::new(b, &vec![1.0; b.x.len()], 4, false, 2.5).unwrap();
            for f in [&b.x, &b.y] {
                let mut out = vec![0.0; op.len()];
                op.apply_d2(f, &mut out);
                let worst = out.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                assert!(worst < 1e-10, "{worst}");
            }
        }
    }
}
