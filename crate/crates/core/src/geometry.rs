//! Two-block boundary-conforming grids around a planar or band-limited
//! self-similar fault.

use crate::error::{Error, Result};
use crate::sbp::{Sbp1d, SbpNorm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// One Fourier mode `amp * cos(k x + phase)` of a fault profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub k: f64,
    pub amp: f64,
    pub phase: f64,
}

/// Fault trace `y = y(x)` sampled at the fault nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultProfile {
    pub x_coords: Vec<f64>,
    pub y_coords: Vec<f64>,
    /// Unit normal of the fault pointing out of the lower block.
    pub normal_minus: Vec<[f64; 2]>,
    pub arclength_weights: SbpNorm,
    pub seed: u64,
    pub amplitude_ratio: f64,
    pub wavelength_band: (f64, f64),
    pub modes: Vec<Mode>,
    pub x_min: f64,
    pub x_max: f64,
}

impl FaultProfile {
    /// Straight fault along `y = 0`.
    pub fn planar(m: usize, domain_x: (f64, f64), order: usize) -> Result<FaultProfile> {
        make_fractal_profile(m, domain_x, 0.0, (1.0, 1.0), 0, order)
    }

    pub fn len(&self) -> usize {
        self.x_coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_coords.is_empty()
    }

    pub fn is_planar(&self) -> bool {
        self.modes.is_empty()
    }

    /// Fault elevation at an arbitrary abscissa.
    pub fn elevation(&self, x: f64) -> f64 {
        self.modes.iter().map(|m| m.amp * (m.k * (x - self.x_min) + m.phase).cos()).sum()
    }

    /// Fault slope `dy/dx` at an arbitrary abscissa.
    pub fn slope(&self, x: f64) -> f64 {
        self.modes.iter().map(|m| -m.amp * m.k * (m.k * (x - self.x_min) + m.phase).sin()).sum()
    }

    /// Root-mean-square slope of the sampled profile.
    pub fn rms_slope(&self) -> f64 {
        let n = self.len() - 1;
        let s: f64 = self.x_coords[..n].iter().map(|&x| self.slope(x).powi(2)).sum();
        (s / n as f64).sqrt()
    }
}

/// Band-limited self-similar profile by random-phase Fourier synthesis.
///
/// Mode amplitudes follow `4 pi alpha sqrt(dk) k^{-3/2}`, so the power
/// spectrum decays as `k^{-3}` and the rms slope is close to
/// `2 pi alpha sqrt(2 ln(lambda_max / lambda_min))`.
pub fn make_fractal_profile(
    m: usize,
    domain_x: (f64, f64),
    amplitude_ratio: f64,
    band: (f64, f64),
    seed: u64,
    order: usize,
) -> Result<FaultProfile> {
    let (x_min, x_max) = domain_x;
    if !(x_max > x_min) || m < 2 {
        return Err(Error::InvalidArgument(format!("bad fault domain [{x_min}, {x_max}] with {m} points")));
    }
    if !(amplitude_ratio >= 0.0) {
        return Err(Error::InvalidArgument(format!("amplitude ratio must be >= 0, got {amplitude_ratio}")));
    }
    let lx = x_max - x_min;
    let h = lx / (m - 1) as f64;
    let mut modes = Vec::new();
    if amplitude_ratio > 0.0 {
        let (lmin, lmax) = band;
        if !(lmin > 0.0 && lmax >= lmin) {
            return Err(Error::InvalidArgument(format!("bad wavelength band [{lmin}, {lmax}]")));
        }
        if lmin < 8.0 * h {
            return Err(Error::UnresolvableBand { lambda_min: lmin, lambda_max: lmax, h, min_allowed: 8.0 * h });
        }
        let dk = 2.0 * PI / lx;
        let j_lo = (lx / lmax).ceil().max(1.0) as usize;
        let j_hi = (lx / lmin).floor() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for j in j_lo..=j_hi {
            let k = dk * j as f64;
            let amp = 4.0 * PI * amplitude_ratio * dk.sqrt() * k.powf(-1.5);
            let phase = rng.gen_range(0.0..2.0 * PI);
            modes.push(Mode { k, amp, phase });
        }
    }
    let x_coords: Vec<f64> = (0..m).map(|i| x_min + lx * i as f64 / (m - 1) as f64).collect();
    let mut profile = FaultProfile {
        y_coords: vec![0.0; m],
        normal_minus: vec![[0.0, 1.0]; m],
        arclength_weights: SbpNorm { weights: vec![], order },
        x_coords,
        seed,
        amplitude_ratio,
        wavelength_band: band,
        modes,
        x_min,
        x_max,
    };
    for i in 0..m {
        let x = profile.x_coords[i];
        profile.y_coords[i] = profile.elevation(x);
        let s = profile.slope(x);
        let l = (1.0 + s * s).sqrt();
        profile.normal_minus[i] = [-s / l, 1.0 / l];
    }
    let op = Sbp1d::new(m, 1.0 / (m - 1) as f64, order)?;
    let mut xs = vec![0.0; m];
    let mut ys = vec![0.0; m];
    op.d1.apply(&profile.x_coords, &mut xs);
    op.d1.apply(&profile.y_coords, &mut ys);
    let weights = (0..m).map(|i| op.norm.weights[i] * xs[i].hypot(ys[i])).collect();
    profile.arclength_weights = SbpNorm { weights, order };
    Ok(profile)
}

/// Initial shear traction `sigma_yz0 * n_y` resolved on the fault.
pub fn fault_normal_shear_projection(profile: &FaultProfile, sigma_yz0: f64) -> Vec<f64> {
    profile.normal_minus.iter().map(|n| sigma_yz0 * n[1]).collect()
}

/// Coordinates and metric terms of one block, stored row-major with the
/// along-fault index `i` slow and the across-fault index `j` fast.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGeometry {
    pub nx: usize,
    pub ny: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub x_xi: Vec<f64>,
    pub x_eta: Vec<f64>,
    pub y_xi: Vec<f64>,
    pub y_eta: Vec<f64>,
    pub jacobian: Vec<f64>,
    pub a11: Vec<f64>,
    pub a12: Vec<f64>,
    pub a22: Vec<f64>,
}

impl BlockGeometry {
    /// Metrics from the first-derivative operator applied to the coordinates.
    pub fn from_coordinates(nx: usize, ny: usize, x: Vec<f64>, y: Vec<f64>, order: usize) -> Result<BlockGeometry> {
        let ox = Sbp1d::new(nx, 1.0 / (nx - 1) as f64, order)?;
        let oy = Sbp1d::new(ny, 1.0 / (ny - 1) as f64, order)?;
        let n = nx * ny;
        let mut x_xi = vec![0.0; n];
        let mut x_eta = vec![0.0; n];
        let mut y_xi = vec![0.0; n];
        let mut y_eta = vec![0.0; n];
        ox.d1.apply_slow(&x, &mut x_xi, ny);
        ox.d1.apply_slow(&y, &mut y_xi, ny);
        oy.d1.apply_fast(&x, &mut x_eta, nx);
        oy.d1.apply_fast(&y, &mut y_eta, nx);
        Ok(Self::with_metrics(nx, ny, x, y, x_xi, x_eta, y_xi, y_eta))
    }

    /// Axis-aligned rectangle with exact metrics.
    pub fn cartesian(nx: usize, ny: usize, xr: (f64, f64), yr: (f64, f64)) -> BlockGeometry {
        let (lx, ly) = (xr.1 - xr.0, yr.1 - yr.0);
        let n = nx * ny;
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        for i in 0..nx {
            for j in 0..ny {
                x[i * ny + j] = xr.0 + lx * i as f64 / (nx - 1) as f64;
                y[i * ny + j] = yr.0 + ly * j as f64 / (ny - 1) as f64;
            }
        }
        Self::with_metrics(nx, ny, x, y, vec![lx; n], vec![0.0; n], vec![0.0; n], vec![ly; n])
    }

    #[allow(clippy::too_many_arguments)]
    fn with_metrics(
        nx: usize,
        ny: usize,
        x: Vec<f64>,
        y: Vec<f64>,
        x_xi: Vec<f64>,
        x_eta: Vec<f64>,
        y_xi: Vec<f64>,
        y_eta: Vec<f64>,
    ) -> BlockGeometry {
        let n = nx * ny;
        let mut jacobian = vec![0.0; n];
        let mut a11 = vec![0.0; n];
        let mut a12 = vec![0.0; n];
        let mut a22 = vec![0.0; n];
        for k in 0..n {
            let j = x_xi[k] * y_eta[k] - x_eta[k] * y_xi[k];
            let j2 = j * j;
            jacobian[k] = j;
            a11[k] = (x_eta[k] * x_eta[k] + y_eta[k] * y_eta[k]) / j2;
            a12[k] = -(x_xi[k] * x_eta[k] + y_xi[k] * y_eta[k]) / j2;
            a22[k] = (x_xi[k] * x_xi[k] + y_xi[k] * y_xi[k]) / j2;
        }
        BlockGeometry { nx, ny, x, y, x_xi, x_eta, y_xi, y_eta, jacobian, a11, a12, a22 }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    pub fn min_jacobian(&self) -> (f64, usize, usize) {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..self.nx {
            for j in 0..self.ny {
                let v = self.jacobian[self.idx(i, j)];
                if v < best.0 {
                    best = (v, i, j);
                }
            }
        }
        best
    }
}

/// Rectangular physical domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// Two blocks sharing the fault: index 0 lies below the fault, index 1 above.
/// The fault is the top edge of block 0 and the bottom edge of block 1.
#[derive(Debug, Clone)]
pub struct CurvilinearGrid {
    pub blocks: [BlockGeometry; 2],
    pub profile: FaultProfile,
    pub domain: Domain,
    pub m: usize,
    pub n_across: usize,
    pub order: usize,
}

/// Across-fault point count giving roughly equal spacing in both directions.
pub fn default_n_across(m: usize, domain: &Domain) -> usize {
    let h = (domain.x_max - domain.x_min) / (m - 1) as f64;
    let ly = (domain.y_max).min(-domain.y_min);
    ((ly / h).round() as usize + 1).max(2)
}

/// Transfinite grid between the straight outer edges and the fault trace.
pub fn build_grid(profile: &FaultProfile, domain: Domain, n_across: usize) -> Result<CurvilinearGrid> {
    let m = profile.len();
    let order = profile.arclength_weights.order;
    if (profile.x_min - domain.x_min).abs() > 1e-12 || (profile.x_max - domain.x_max).abs() > 1e-12 {
        return Err(Error::InvalidArgument("fault profile does not span the domain width".into()));
    }
    let ymax_fault = profile.y_coords.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ymin_fault = profile.y_coords.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(domain.y_min < ymin_fault && domain.y_max > ymax_fault) {
        return Err(Error::InvalidArgument("fault leaves the domain vertically".into()));
    }
    let ny = n_across;
    let mut blocks = Vec::with_capacity(2);
    for b in 0..2 {
        let mut x = vec![0.0; m * ny];
        let mut y = vec![0.0; m * ny];
        for i in 0..m {
            let yf = profile.y_coords[i];
            let (y0, y1) = if b == 0 { (domain.y_min, yf) } else { (yf, domain.y_max) };
            for j in 0..ny {
                let eta = j as f64 / (ny - 1) as f64;
                x[i * ny + j] = profile.x_coords[i];
                y[i * ny + j] = (1.0 - eta) * y0 + eta * y1;
            }
        }
        let g = BlockGeometry::from_coordinates(m, ny, x, y, order)?;
        let (jmin, i, j) = g.min_jacobian();
        if !(jmin > 0.0) {
            return Err(Error::FoldedMapping { block: b, i, j, jacobian: jmin });
        }
        blocks.push(g);
    }
    let b1 = blocks.pop().unwrap();
    let b0 = blocks.pop().unwrap();
    Ok(CurvilinearGrid { blocks: [b0, b1], profile: profile.clone(), domain, m, n_across, order })
}

impl CurvilinearGrid {
    /// Planar two-block grid with exact metrics.
    pub fn cartesian(m: usize, domain: Domain, n_across: usize, order: usize) -> Result<CurvilinearGrid> {
        let profile = FaultProfile::planar(m, (domain.x_min, domain.x_max), order)?;
        let xr = (domain.x_min, domain.x_max);
        let b0 = BlockGeometry::cartesian(m, n_across, xr, (domain.y_min, 0.0));
        let b1 = BlockGeometry::cartesian(m, n_across, xr, (0.0, domain.y_max));
        Ok(CurvilinearGrid { blocks: [b0, b1], profile, domain, m, n_across, order })
    }

    /// Which block contains `(x, y)`, with its reference coordinates.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, f64, f64)> {
        let d = &self.domain;
        if x < d.x_min || x > d.x_max || y < d.y_min || y > d.y_max {
            return None;
        }
        let xi = (x - d.x_min) / (d.x_max - d.x_min);
        let yf = self.profile.elevation(x);
        if y < yf {
            Some((0, xi, (y - d.y_min) / (yf - d.y_min)))
        } else if y > yf {
            Some((1, xi, (y - yf) / (d.y_max - yf)))
        } else {
            None
        }
    }

    /// Smallest physical grid spacing in km.
    pub fn h_min(&self) -> f64 {
        let hx = (self.domain.x_max - self.domain.x_min) / (self.m - 1) as f64;
        let mut hy = f64::INFINITY;
        for b in &self.blocks {
            for i in 0..b.nx {
                let span = b.y[b.idx(i, b.ny - 1)] - b.y[b.idx(i, 0)];
                hy = hy.min(span / (b.ny - 1) as f64);
            }
        }
        hx.min(hy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dom() -> Domain {
        Domain { x_min: -15.0, x_max: 15.0, y_min: -15.0, y_max: 15.0 }
    }

    #[test]
    fn planar_profile() {
        let p = FaultProfile::planar(31, (-15.0, 15.0), 4).unwrap();
        assert!(p.y_coords.iter().all(|&y| y == 0.0));
        assert!(p.normal_minus.iter().all(|n| n == &[0.0, 1.0]));
        let s: f64 = p.arclength_weights.weights.iter().sum();
        assert!((s - 30.0).abs() < 1e-12);
        assert_eq!(fault_normal_shear_projection(&p, 72.0), vec![72.0; 31]);
        assert_eq!(fault_normal_shear_projection(&p, 0.0), vec![0.0; 31]);
    }

    #[test]
    fn sloped_normal_projection() {
        let mut p = FaultProfile::planar(11, (0.0, 1.0), 2).unwrap();
        p.normal_minus = vec![[-(0.5f64).sqrt(), (0.5f64).sqrt()]; 11];
        let t = fault_normal_shear_projection(&p, 72.0);
        assert!((t[3] - 72.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn fractal_profile_determinism_and_normals() {
        let a = make_fractal_profile(401, (-15.0, 15.0), 0.01, (1.0, 30.0), 7, 4).unwrap();
        let b = make_fractal_profile(401, (-15.0, 15.0), 0.01, (1.0, 30.0), 7, 4).unwrap();
        assert_eq!(a, b);
        let c = make_fractal_profile(401, (-15.0, 15.0), 0.01, (1.0, 30.0), 8, 4).unwrap();
        assert_ne!(a.y_coords, c.y_coords);
        for n in &a.normal_minus {
            assert!((n[0].hypot(n[1]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unresolvable_band_rejected() {
        let e = make_fractal_profile(101, (-15.0, 15.0), 0.01, (1.0, 30.0), 1, 4);
        assert!(matches!(e, Err(Error::UnresolvableBand { .. })));
        assert!(make_fractal_profile(101, (-15.0, 15.0), -0.1, (3.0, 30.0), 1, 4).is_err());
    }

    #[test]
    fn rms_slope_matches_amplitude_ratio() {
        for seed in 0..5 {
            let p = make_fractal_profile(1201, (-15.0, 15.0), 0.01, (1.0, 30.0), seed, 4).unwrap();
            let want = 2.0 * PI * 0.01 * (2.0 * (30.0f64).ln()).sqrt();
            let got = p.rms_slope();
            assert!((got / want - 1.0).abs() < 0.2, "{got} vs {want}");
        }
    }

    #[test]
    fn spacing_for_reference_grid() {
        let n = default_n_across(101, &dom());
        assert_eq!(n, 51);
        let g = build_grid(&FaultProfile::planar(101, (-15.0, 15.0), 4).unwrap(), dom(), n).unwrap();
        assert!((g.h_min() - 0.3).abs() < 1e-12);
        let (jmin, _, _) = g.blocks[0].min_jacobian();
        assert!((jmin - 30.0 * 15.0).abs() < 1e-9);
    }

    #[test]
    fn fractal_grid_is_unfolded() {
        let p = make_fractal_profile(201, (-15.0, 15.0), 0.01, (1.5, 30.0), 3, 4).unwrap();
        let g = build_grid(&p, dom(), default_n_across(201, &dom())).unwrap();
        for b in &g.blocks {
            assert!(b.min_jacobian().0 > 0.0);
        }
        let top = &g.blocks[0];
        let bot = &g.blocks[1];
        for i in 0..g.m {
            assert_eq!(top.y[top.idx(i, g.n_across - 1)], bot.y[bot.idx(i, 0)]);
            assert_eq!(top.x[top.idx(i, g.n_across - 1)], bot.x[bot.idx(i, 0)]);
        }
    }

    #[test]
    fn identity_mapping_metrics() {
        let g = BlockGeometry::cartesian(9, 9, (0.0, 1.0), (0.0, 1.0));
        assert!(g.a11.iter().all(|&v| v == 1.0));
        assert!(g.a22.iter().all(|&v| v == 1.0));
        assert!(g.a12.iter().all(|&v| v == 0.0));
        let d = BlockGeometry::from_coordinates(9, 9, g.x.clone(), g.y.clone(), 4).unwrap();
        for k in 0..81 {
            assert!((d.a11[k] - 1.0).abs() < 1e-13 && d.a12[k].abs() < 1e-13);
        }
    }

    #[test]
    fn locate_points() {
        let g = CurvilinearGrid::cartesian(31, dom(), 16, 4).unwrap();
        assert_eq!(g.locate(0.0, -7.5), Some((0, 0.5, 0.5)));
        assert_eq!(g.locate(0.0, 7.5), Some((1, 0.5, 0.5)));
        assert_eq!(g.locate(0.0, 0.0), None);
        assert_eq!(g.locate(20.0, 1.0), None);
    }
}
