#![allow(dead_code)]

use rupture_core::config::RunConfig;

/// Reference physics on a coarse grid and a short window.
pub fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.discretization.m = 41;
    c.discretization.dt = Some(0.02);
    c.discretization.t_end = 2.0;
    c.inversion.m_p = 9;
    c.output.slip_times = vec![1.0, 2.0];
    c
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale.max(f64::MIN_POSITIVE)
}
