//! Point receivers represented by discrete Dirac deltas.

use crate::error::{Error, Result};
use crate::geometry::CurvilinearGrid;
use crate::sbp::BlockOperator;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Recorded field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MisfitKind {
    Displacement,
    Velocity,
}

impl MisfitKind {
    pub fn unit(self) -> &'static str {
        match self {
            MisfitKind::Displacement => "m",
            MisfitKind::Velocity => "m/s",
        }
    }
}

/// Multiplicative time window with cosine tapers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub taper: f64,
}

impl Window {
    pub fn value(&self, t: f64) -> f64 {
        if t < self.start || t > self.end {
            return 0.0;
        }
        let d = (t - self.start).min(self.end - t);
        if self.taper <= 0.0 || d >= self.taper {
            1.0
        } else {
            0.5 * (1.0 - (PI * d / self.taper).cos())
        }
    }
}

/// One receiver with its discrete delta on a block.
#[derive(Debug, Clone, PartialEq)]
pub struct Receiver {
    pub x: f64,
    pub y: f64,
    pub block: usize,
    pub nodes: Vec<usize>,
    /// Quadrature-weighted delta `H_vol delta`, i.e. interpolation weights.
    pub weights: Vec<f64>,
    /// Grid function values of the discrete delta.
    pub delta: Vec<f64>,
}

impl Receiver {
    /// `<delta, f>_H`.
    pub fn sample(&self, field: &[f64]) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&k, w)| w * field[k]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverSet {
    pub receivers: Vec<Receiver>,
    pub kind: MisfitKind,
    pub window: Option<Window>,
    /// Observed series per receiver at every RK stage.
    pub data: Option<Vec<Vec<f64>>>,
}

/// Receiver lattice on `outer` (x0, x1, y0, y1) with points strictly inside `inner` removed.
pub fn rectangle_layout(outer: [f64; 4], inner: [f64; 4], spacing: f64) -> Vec<(f64, f64)> {
    let nx = ((outer[1] - outer[0]) / spacing + 1e-9).floor() as usize;
    let ny = ((outer[3] - outer[2]) / spacing + 1e-9).floor() as usize;
    let mut pts = Vec::new();
    for i in 0..=nx {
        let x = outer[0] + spacing * i as f64;
        for j in 0..=ny {
            let y = outer[2] + spacing * j as f64;
            let inside = x > inner[0] && x < inner[1] && y > inner[2] && y < inner[3];
            if !inside {
                pts.push((x, y));
            }
        }
    }
    pts
}

/// Interpolation weights on `order + 1` nearest nodes of a unit-interval grid, exact to degree `order`.
pub fn delta_weights_1d(n: usize, t: f64, order: usize) -> Result<(usize, Vec<f64>)> {
    let h = 1.0 / (n - 1) as f64;
    let p = order + 1;
    if n < p {
        return Err(Error::InvalidArgument(format!("{n} nodes cannot host a {p}-point delta")));
    }
    let center = (t / h).round() as isize - (order / 2) as isize;
    let start = center.clamp(0, (n - p) as isize) as usize;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    for q in 0..p {
        for k in 0..p {
            a[(q, k)] = (((start + k) as f64 * h - t) / h).powi(q as i32);
        }
    }
    b[0] = 1.0;
    let c = a.lu().solve(&b).ok_or_else(|| Error::InvalidArgument("singular moment system".into()))?;
    Ok((start, c.iter().copied().collect()))
}

impl ReceiverSet {
    pub fn new(
        grid: &CurvilinearGrid,
        ops: &[BlockOperator; 2],
        positions: &[(f64, f64)],
        kind: MisfitKind,
        window: Option<Window>,
    ) -> Result<ReceiverSet> {
        let order = grid.order;
        let mut receivers = Vec::with_capacity(positions.len());
        for &(x, y) in positions {
            let (block, xi, eta) = grid.locate(x, y).ok_or_else(|| Error::Receiver {
                x,
                y,
                msg: "outside the domain or on the fault".into(),
            })?;
            let op = &ops[block];
            let (sx, cx) = delta_weights_1d(op.nx, xi, order)?;
            let (sy, cy) = delta_weights_1d(op.ny, eta, order)?;
            let mut nodes = Vec::new();
            let mut weights = Vec::new();
            let mut delta = Vec::new();
            for (a, wa) in cx.iter().enumerate() {
                for (b, wb) in cy.iter().enumerate() {
                    let (i, j) = (sx + a, sy + b);
                    let k = i * op.ny + j;
                    let w = wa * wb;
                    nodes.push(k);
                    weights.push(w);
                    delta.push(w / op.hvol[k]);
                }
            }
            receivers.push(Receiver { x, y, block, nodes, weights, delta });
        }
        Ok(ReceiverSet { receivers, kind, window, data: None })
    }

    pub fn len(&self) -> usize {
        self.receivers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.receivers.is_empty()
    }

    pub fn window_value(&self, t: f64) -> f64 {
        self.window.map_or(1.0, |w| w.value(t))
    }

    /// Checks that data covers `n_stages` stages.
    pub fn check_data(&self, n_stages: usize) -> Result<()> {
        if let Some(data) = &self.data {
            if data.len() != self.len() {
                return Err(Error::HistoryMismatch(format!(
                    "{} data series for {} receivers",
                    data.len(),
                    self.len()
                )));
            }
            for (r, d) in data.iter().enumerate() {
                if d.len() < n_stages {
                    return Err(Error::DataTooShort { receiver: r, got: d.len(), need: n_stages });
                }
            }
        }
        Ok(())
    }
}

/// Four-point Lagrange interpolation of samples at strictly increasing `times`.
pub fn resample_cubic(times: &[f64], values: &[f64], targets: &[f64]) -> Result<Vec<f64>> {
    let n = times.len();
    if n < 4 || values.len() != n || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(format!("need at least 4 strictly increasing samples, got {n}")));
    }
    let slack = 1e-9 * (times[n - 1] - times[0]);
    targets
        .iter()
        .map(|&t| {
            if t < times[0] - slack || t > times[n - 1] + slack {
                return Err(Error::InvalidArgument(format!("time {t} outside [{}, {}]", times[0], times[n - 1])));
            }
            let j = times.partition_point(|&x| x <= t);
            let start = j.saturating_sub(2).min(n - 4);
            let mut v = 0.0;
            for a in start..start + 4 {
                let mut l = 1.0;
                for b in start..start + 4 {
                    if a != b {
                        l *= (t - times[b]) / (times[a] - times[b]);
                    }
                }
                v += l * values[a];
            }
            Ok(v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_layouts_have_expected_counts() {
        let coarse = rectangle_layout([-9.0, 9.0, -9.0, 9.0], [-7.0, 7.0, -3.0, 3.0], 2.0);
        assert_eq!(coarse.len(), 88);
        let fine = rectangle_layout([-9.0, 9.0, -9.0, 9.0], [-6.0, 7.0, -2.0, 2.0], 1.0);
        assert_eq!(fine.len(), 325);
    }

    #[test]
    fn one_dimensional_moments() {
        for order in [2, 4, 6] {
            for &t in &[0.0, 0.013, 0.5, 0.731, 0.99, 1.0] {
                let (s, c) = delta_weights_1d(41, t, order).unwrap();
                for q in 0..=order {
                    let m: f64 = c.iter().enumerate().map(|(k, w)| w * ((s + k) as f64 / 40.0).powi(q as i32)).sum();
                    assert!((m - t.powi(q as i32)).abs() < 1e-12, "order {order} t {t} q {q}");
                }
            }
        }
    }

    #[test]
    fn window_shape() {
        let w = Window { start: 1.0, end: 5.0, taper: 1.0 };
        assert_eq!(w.value(0.5), 0.0);
        assert_eq!(w.value(3.0), 1.0);
        assert!((w.value(1.5) - 0.5).abs() < 1e-15);
        assert_eq!(w.value(5.5), 0.0);
    }

    #[test]
    fn cubic_resample_is_exact_on_cubics() {
        let times: Vec<f64> = (0..30).map(|i| 0.1 * i as f64 + 0.01 * (i as f64).sin()).collect();
        let f = |t: f64| 2.0 - t + 0.5 * t * t - 0.3 * t * t * t;
        let vals: Vec<f64> = times.iter().map(|&t| f(t)).collect();
        let targets: Vec<f64> = (0..57).map(|i| 0.05 * i as f64).collect();
        let out = resample_cubic(&times, &vals, &targets).unwrap();
        for (t, v) in targets.iter().zip(out) {
            assert!((v - f(*t)).abs() < 1e-11, "t {t}");
        }
        assert!(resample_cubic(&times, &vals, &[3.5]).is_err());
    }
}
