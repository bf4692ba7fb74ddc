//! Limited-memory BFGS with a strong Wolfe line search and box projection.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_iterations: usize,
    /// Stop when the projected gradient 2-norm drops below this.
    pub gradient_tol: f64,
    pub max_search_evaluations: usize,
    /// Max-norm length of the first trial step; `None` uses the unit step on `-g / |g|`.
    pub first_step: Option<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            max_iterations: 100,
            gradient_tol: 1e-12,
            max_search_evaluations: 30,
            first_step: None,
            lower: None,
            upper: None,
        }
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbfgsState {
    pub iteration: usize,
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
    pub s: VecDeque<Vec<f64>>,
    pub y: VecDeque<Vec<f64>>,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub misfit: f64,
    pub gradient_norm: f64,
    pub step: f64,
    pub evaluations: usize,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed(String),
    Stopped,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub state: LbfgsState,
    pub trace: Vec<IterationRecord>,
    pub termination: Termination,
}

/// Objective value and gradient, or `None` where the point is inadmissible.
pub type Evaluation = Option<(f64, Vec<f64>)>;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Bounds<'a> {
    lower: Option<&'a [f64]>,
    upper: Option<&'a [f64]>,
}

impl Bounds<'_> {
    fn contains(&self, x: &[f64]) -> Option<usize> {
        (0..x.len()).find(|&i| {
            self.lower.is_some_and(|l| x[i] < l[i]) || self.upper.is_some_and(|u| x[i] > u[i]) || !x[i].is_finite()
        })
    }

    fn projected_gradient(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let at_lo = self.lower.is_some_and(|l| x[i] <= l[i]) && g[i] > 0.0;
                let at_hi = self.upper.is_some_and(|u| x[i] >= u[i]) && g[i] < 0.0;
                if at_lo || at_hi {
                    0.0
                } else {
                    g[i]
                }
            })
            .collect()
    }

    /// Largest `alpha` keeping `x + alpha d` feasible.
    fn max_step(&self, x: &[f64], d: &[f64]) -> f64 {
        let mut amax = f64::INFINITY;
        for i in 0..x.len() {
            if d[i] < 0.0 {
                if let Some(l) = self.lower {
                    amax = amax.min((l[i] - x[i]) / d[i]);
                }
            } else if d[i] > 0.0 {
                if let Some(u) = self.upper {
                    amax = amax.min((u[i] - x[i]) / d[i]);
                }
            }
        }
        amax.max(0.0)
    }
}

fn two_loop(state: &LbfgsState, q0: &[f64]) -> Vec<f64> {
    let k = state.s.len();
    let mut q = q0.to_vec();
    let mut alpha = vec![0.0; k];
    let rho: Vec<f64> = (0..k).map(|j| 1.0 / dot(&state.y[j], &state.s[j])).collect();
    for j in (0..k).rev() {
        alpha[j] = rho[j] * dot(&state.s[j], &q);
        q.iter_mut().zip(&state.y[j]).for_each(|(qi, yi)| *qi -= alpha[j] * yi);
    }
    if k > 0 {
        let gamma = dot(&state.s[k - 1], &state.y[k - 1]) / dot(&state.y[k - 1], &state.y[k - 1]);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for j in 0..k {
        let beta = rho[j] * dot(&state.y[j], &q);
        q.iter_mut().zip(&state.s[j]).for_each(|(qi, si)| *qi += (alpha[j] - beta) * si);
    }
    q
}

#[derive(Clone)]
struct Point {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    x: Vec<f64>,
    slope: f64,
}

/// Minimizer of the cubic through two points with slopes, safeguarded into the inner 80% of the interval.
fn cubic_step(a: &Point, b: &Point) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha { (a.alpha, b.alpha) } else { (b.alpha, a.alpha) };
    let width = hi - lo;
    let fallback = 0.5 * (lo + hi);
    if !b.f.is_finite() || !a.f.is_finite() {
        return fallback;
    }
    let d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    if disc < 0.0 {
        return fallback;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    if t.is_finite() && t > lo + 0.1 * width && t < hi - 0.1 * width {
        t
    } else {
        fallback
    }
}

/// Minimizes from `x0`; `observer` sees every accepted iterate and may return `false` to stop.
pub fn minimize<F, O>(mut objective: F, x0: &[f64], opts: &LbfgsOptions, observer: O) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
    O: FnMut(&IterationRecord, &LbfgsState) -> bool,
{
    check_options(opts, x0.len())?;
    let bounds = Bounds { lower: opts.lower.as_deref(), upper: opts.upper.as_deref() };
    if let Some(i) = bounds.contains(x0) {
        return Err(Error::InvalidArgument(format!("initial component {i} = {} violates the bounds", x0[i])));
    }
    let (f, g) = objective(x0)?
        .ok_or_else(|| Error::InvalidArgument("objective is not admissible at the initial point".into()))?;
    let state = LbfgsState { iteration: 0, x: x0.to_vec(), f, g, s: VecDeque::new(), y: VecDeque::new(), evaluations: 1 };
    resume(objective, state, Vec::new(), opts, observer)
}

/// Continues from a saved state, appending to `trace`.
pub fn resume<F, O>(
    mut objective: F,
    mut state: LbfgsState,
    mut trace: Vec<IterationRecord>,
    opts: &LbfgsOptions,
    mut observer: O,
) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
    O: FnMut(&IterationRecord, &LbfgsState) -> bool,
{
    check_options(opts, state.x.len())?;
    let bounds = Bounds { lower: opts.lower.as_deref(), upper: opts.upper.as_deref() };
    let n = state.x.len();
    if trace.is_empty() {
        let rec = IterationRecord {
            iteration: state.iteration,
            misfit: state.f,
            gradient_norm: norm2(&bounds.projected_gradient(&state.x, &state.g)),
            step: 0.0,
            evaluations: state.evaluations,
            x: state.x.clone(),
        };
        trace.push(rec.clone());
        if !observer(&rec, &state) {
            return Ok(LbfgsOutcome { state, trace, termination: Termination::Stopped });
        }
    }
    loop {
        let pg = bounds.projected_gradient(&state.x, &state.g);
        if norm2(&pg) < opts.gradient_tol {
            return Ok(LbfgsOutcome { state, trace, termination: Termination::GradientTolerance });
        }
        if state.iteration >= opts.max_iterations {
            return Ok(LbfgsOutcome { state, trace, termination: Termination::MaxIterations });
        }
        let mut d: Vec<f64> = two_loop(&state, &pg).iter().map(|v| -v).collect();
        for i in 0..n {
            if pg[i] == 0.0 && state.g[i] != 0.0 {
                d[i] = 0.0;
            }
        }
        if !(dot(&d, &pg) < 0.0) {
            state.s.clear();
            state.y.clear();
            d = pg.iter().map(|v| -v).collect();
        }
        let mut alpha0 = 1.0;
        if state.s.is_empty() {
            let dmax = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            alpha0 = match opts.first_step {
                Some(len) => len / dmax,
                None => 1.0 / norm2(&d),
            };
        }
        let amax = bounds.max_step(&state.x, &d);
        let current = Point { alpha: 0.0, f: state.f, g: state.g.clone(), x: state.x.clone(), slope: dot(&state.g, &d) };
        let found = line_search(&mut objective, &current, &d, alpha0.min(amax), amax, opts, &mut state.evaluations)?;
        let p = match found {
            Ok(p) => p,
            Err(msg) => return Ok(LbfgsOutcome { state, trace, termination: Termination::LineSearchFailed(msg) }),
        };
        let s: Vec<f64> = p.x.iter().zip(&state.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = p.g.iter().zip(&state.g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * norm2(&s) * norm2(&y) {
            state.s.push_back(s);
            state.y.push_back(y);
            if state.s.len() > opts.memory {
                state.s.pop_front();
                state.y.pop_front();
            }
        }
        let step = p.alpha * norm2(&d);
        state.x = p.x;
        state.f = p.f;
        state.g = p.g;
        state.iteration += 1;
        let rec = IterationRecord {
            iteration: state.iteration,
            misfit: state.f,
            gradient_norm: norm2(&bounds.projected_gradient(&state.x, &state.g)),
            step,
            evaluations: state.evaluations,
            x: state.x.clone(),
        };
        trace.push(rec.clone());
        if !observer(&rec, &state) {
            return Ok(LbfgsOutcome { state, trace, termination: Termination::Stopped });
        }
    }
}

fn check_options(opts: &LbfgsOptions, n: usize) -> Result<()> {
    if opts.memory == 0 || !(0.0 < opts.c1 && opts.c1 < opts.c2 && opts.c2 < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need memory > 0 and 0 < c1 < c2 < 1, got memory {} c1 {} c2 {}",
            opts.memory, opts.c1, opts.c2
        )));
    }
    for b in [&opts.lower, &opts.upper].into_iter().flatten() {
        if b.len() != n {
            return Err(Error::InvalidArgument(format!("bound has {} entries for {n} unknowns", b.len())));
        }
    }
    Ok(())
}

fn probe<F>(objective: &mut F, base: &Point, d: &[f64], alpha: f64, evals: &mut usize) -> Result<Point>
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
{
    let x: Vec<f64> = base.x.iter().zip(d).map(|(x, d)| x + alpha * d).collect();
    *evals += 1;
    Ok(match objective(&x)? {
        Some((f, g)) if f.is_finite() => {
            let slope = dot(&g, d);
            Point { alpha, f, g, x, slope }
        }
        _ => Point { alpha, f: f64::INFINITY, g: vec![f64::NAN; d.len()], x, slope: f64::NAN },
    })
}

type Search = std::result::Result<Point, String>;

fn line_search<F>(
    objective: &mut F,
    base: &Point,
    d: &[f64],
    alpha_init: f64,
    alpha_max: f64,
    opts: &LbfgsOptions,
    evals: &mut usize,
) -> Result<Search>
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
{
    if !(alpha_max > 0.0) {
        return Ok(Err("no feasible step along the search direction".into()));
    }
    let armijo = |p: &Point| p.f <= base.f + opts.c1 * p.alpha * base.slope;
    let curvature = |p: &Point| p.slope.abs() <= -opts.c2 * base.slope;
    let mut prev = base.clone();
    let mut alpha = alpha_init;
    let mut used = 0;
    loop {
        let p = probe(objective, base, d, alpha, evals)?;
        used += 1;
        if !armijo(&p) || (used > 1 && p.f >= prev.f) {
            return zoom(objective, base, d, prev, p, opts, evals, used);
        }
        if curvature(&p) {
            return Ok(Ok(p));
        }
        if p.slope >= 0.0 {
            return zoom(objective, base, d, p, prev, opts, evals, used);
        }
        if alpha >= alpha_max {
            return Ok(Ok(p));
        }
        if used >= opts.max_search_evaluations {
            return Ok(Err(format!("no strong Wolfe point after {used} evaluations")));
        }
        alpha = (4.0 * alpha).min(alpha_max);
        prev = p;
    }
}

#[allow(clippy::too_many_arguments)]
fn zoom<F>(
    objective: &mut F,
    base: &Point,
    d: &[f64],
    mut lo: Point,
    mut hi: Point,
    opts: &LbfgsOptions,
    evals: &mut usize,
    mut used: usize,
) -> Result<Search>
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
{
    loop {
        if used >= opts.max_search_evaluations {
            return Ok(Err(format!("zoom did not converge after {used} evaluations")));
        }
        let alpha = cubic_step(&lo, &hi);
        if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(hi.alpha.abs()) {
            return Ok(Err("line search interval collapsed".into()));
        }
        let p = probe(objective, base, d, alpha, evals)?;
        used += 1;
        if p.f > base.f + opts.c1 * alpha * base.slope || p.f >= lo.f {
            hi = p;
        } else {
            if p.slope.abs() <= -opts.c2 * base.slope {
                return Ok(Ok(p));
            }
            if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(n: usize) -> (Vec<f64>, Vec<f64>) {
        let diag: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.7).collect();
        let xstar: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        (diag, xstar)
    }

    #[test]
    fn quadratic_bowl_converges() {
        let (diag, xstar) = quadratic(11);
        let f = |x: &[f64]| -> Result<Evaluation> {
            let g: Vec<f64> = (0..x.len()).map(|i| diag[i] * (x[i] - xstar[i])).collect();
            let v = 0.5 * (0..x.len()).map(|i| diag[i] * (x[i] - xstar[i]).powi(2)).sum::<f64>();
            Ok(Some((v, g)))
        };
        let opts = LbfgsOptions { gradient_tol: 1e-10, max_iterations: 20, ..Default::default() };
        let out = minimize(f, &[0.0; 11], &opts, |_, _| true).unwrap();
        assert!(out.state.f < 1e-16, "f = {} after {} iterations", out.state.f, out.state.iteration);
        assert!(out.state.iteration <= 20);
        for w in out.trace.windows(2) {
            assert!(w[1].misfit <= w[0].misfit);
        }
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| -> Result<Evaluation> {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Ok(Some((v, g)))
        };
        let opts = LbfgsOptions { gradient_tol: 1e-10, ..Default::default() };
        let out = minimize(f, &[-1.2, 1.0], &opts, |_, _| true).unwrap();
        assert!(out.state.iteration <= 100);
        assert!((out.state.x[0] - 1.0).abs() < 1e-8 && (out.state.x[1] - 1.0).abs() < 1e-8, "{:?}", out.state.x);
    }

    #[test]
    fn bounds_are_respected() {
        let f = |x: &[f64]| -> Result<Evaluation> { Ok(Some(((x[0] + 1.0).powi(2) + (x[1] - 2.0).powi(2), vec![2.0 * (x[0] + 1.0), 2.0 * (x[1] - 2.0)]))) };
        let opts = LbfgsOptions { lower: Some(vec![0.5, -10.0]), gradient_tol: 1e-10, ..Default::default() };
        let out = minimize(f, &[3.0, 0.0], &opts, |_, _| true).unwrap();
        assert_eq!(out.termination, Termination::GradientTolerance);
        assert!((out.state.x[0] - 0.5).abs() < 1e-12);
        assert!((out.state.x[1] - 2.0).abs() < 1e-8);
        assert!(minimize(f, &[0.0, 0.0], &opts, |_, _| true).is_err());
    }

    #[test]
    fn inadmissible_points_backtrack() {
        let f = |x: &[f64]| -> Result<Evaluation> {
            if x[0] <= 0.0 {
                return Ok(None);
            }
            Ok(Some((x[0] - x[0].ln(), vec![1.0 - 1.0 / x[0]])))
        };
        let opts = LbfgsOptions { first_step: Some(50.0), gradient_tol: 1e-9, ..Default::default() };
        let out = minimize(f, &[10.0], &opts, |_, _| true).unwrap();
        assert!((out.state.x[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let (diag, xstar) = quadratic(6);
        let f = |x: &[f64]| -> Result<Evaluation> {
            let g: Vec<f64> = (0..x.len()).map(|i| diag[i] * (x[i] - xstar[i]) + x[i].powi(3)).collect();
            let v = (0..x.len()).map(|i| 0.5 * diag[i] * (x[i] - xstar[i]).powi(2) + 0.25 * x[i].powi(4)).sum::<f64>();
            Ok(Some((v, g)))
        };
        let opts = LbfgsOptions { max_iterations: 8, gradient_tol: 0.0, ..Default::default() };
        let full = minimize(f, &[2.0; 6], &opts, |_, _| true).unwrap();
        let part = minimize(f, &[2.0; 6], &opts, |r, _| r.iteration < 3).unwrap();
        assert_eq!(part.termination, Termination::Stopped);
        let json = serde_json::to_string(&part.state).unwrap();
        let state: LbfgsState = serde_json::from_str(&json).unwrap();
        let rest = resume(f, state, part.trace, &opts, |_, _| true).unwrap();
        assert_eq!(rest.trace, full.trace);
    }
}
