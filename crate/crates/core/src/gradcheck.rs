//! Adjoint gradients against one-sided finite differences of the discrete misfit.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub delta: f64,
    pub error: f64,
    /// One-sided difference quotients per coarse component.
    pub fd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub base_misfit: f64,
    pub gradient: Vec<f64>,
    /// Parameter scale `p_bar` of the normalized norm.
    pub scale: Vec<f64>,
    /// Sorted by increasing delta.
    pub points: Vec<CurvePoint>,
}

impl ErrorCurve {
    pub fn minimum(&self) -> Option<&CurvePoint> {
        self.points.iter().filter(|p| p.error.is_finite()).min_by(|a, b| a.error.total_cmp(&b.error))
    }

    /// Error decreases towards an interior minimum from both ends, allowing
    /// local increases by up to `slack` between neighbours.
    pub fn is_v_shaped(&self, slack: f64) -> bool {
        let e: Vec<f64> = self.points.iter().map(|p| p.error).collect();
        if e.len() < 3 || e.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let k = (0..e.len()).min_by(|&a, &b| e[a].total_cmp(&e[b])).unwrap_or(0);
        if k == 0 || k == e.len() - 1 {
            return false;
        }
        let left = (1..=k).all(|i| e[i] <= slack * e[i - 1]);
        let right = (k + 1..e.len()).all(|i| e[i] * slack >= e[i - 1]);
        left && right && e[0] > e[k] && e[e.len() - 1] > e[k]
    }
}

/// `count` deltas log-spaced over `[10^lo, 10^hi]`.
pub fn log_deltas(log10_range: [f64; 2], count: usize) -> Vec<f64> {
    let [lo, hi] = log10_range;
    if count < 2 {
        return vec![10f64.powf(lo)];
    }
    (0..count).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (count - 1) as f64)).collect()
}

/// `|p_bar^{-1} v|_inf`; zero scales count as one.
pub fn scaled_max_norm(v: &[f64], scale: &[f64]) -> f64 {
    v.iter()
        .zip(scale)
        .map(|(x, s)| if *s == 0.0 { x.abs() } else { (x / s).abs() })
        .fold(0.0, f64::max)
}

pub fn relative_error(gradient: &[f64], fd: &[f64], scale: &[f64]) -> f64 {
    let diff: Vec<f64> = gradient.iter().zip(fd).map(|(a, b)| a - b).collect();
    scaled_max_norm(&diff, scale) / scaled_max_norm(gradient, scale)
}

/// Perturbs one coarse component at a time for every delta and compares
/// `(F(p + delta e_i) - F(p)) / delta` with `gradient`. Runs `jobs` misfit
/// evaluations concurrently.
pub fn fd_gradient_check<F>(misfit: F, p0: &[f64], gradient: &[f64], deltas: &[f64], jobs: usize) -> Result<ErrorCurve>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if gradient.len() != p0.len() {
        return Err(Error::InvalidArgument(format!("gradient of length {} for {} parameters", gradient.len(), p0.len())));
    }
    let mut deltas = deltas.to_vec();
    deltas.sort_by(f64::total_cmp);
    let base = misfit(p0)?;
    let n = p0.len();
    let tasks: Vec<(usize, usize)> = (0..deltas.len()).flat_map(|d| (0..n).map(move |i| (d, i))).collect();
    let results = Mutex::new(vec![f64::NAN; tasks.len()]);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(tasks.len().max(1)) {
            scope.spawn(|| loop {
                let t = next.fetch_add(1, Ordering::Relaxed);
                if t >= tasks.len() || first_error.lock().map(|e| e.is_some()).unwrap_or(true) {
                    break;
                }
                let (d, i) = tasks[t];
                let mut p = p0.to_vec();
                p[i] += deltas[d];
                match misfit(&p) {
                    Ok(f) => {
                        if let Ok(mut r) = results.lock() {
                            r[t] = (f - base) / deltas[d];
                        }
                    }
                    Err(e) => {
                        if let Ok(mut slot) = first_error.lock() {
                            slot.get_or_insert(e);
                        }
                    }
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().ok().flatten() {
        return Err(e);
    }
    let quotients = results.into_inner().map_err(|_| Error::InvalidArgument("worker panicked".into()))?;
    let scale: Vec<f64> = p0.to_vec();
    let points = deltas
        .iter()
        .enumerate()
        .map(|(d, &delta)| {
            let fd = quotients[d * n..(d + 1) * n].to_vec();
            CurvePoint { delta, error: relative_error(gradient, &fd, &scale), fd }
        })
        .collect();
    Ok(ErrorCurve { base_misfit: base, gradient: gradient.to_vec(), scale, points })
}
