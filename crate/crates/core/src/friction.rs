//! Regularized rate-and-state friction with the slip law.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

/// Fault parameters, one value per fault node except `f0` and `v0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrictionModel {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Characteristic slip distance in m.
    pub dc: Vec<f64>,
    pub f0: f64,
    /// Reference slip velocity in m/s.
    pub v0: f64,
    pub sigma_n0: Vec<f64>,
    pub tau0: Vec<f64>,
    pub tau_l: Vec<f64>,
    pub psi0: Vec<f64>,
}

/// Parameters that can be differentiated or inverted for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    A,
    B,
    Dc,
    F0,
    Tau0,
    SigmaN0,
    Psi0,
}

impl Param {
    pub fn name(self) -> &'static str {
        match self {
            Param::A => "a",
            Param::B => "b",
            Param::Dc => "dc",
            Param::F0 => "f0",
            Param::Tau0 => "tau0",
            Param::SigmaN0 => "sigma_n0",
            Param::Psi0 => "psi0",
        }
    }

    pub fn parse(s: &str) -> Option<Param> {
        [Param::A, Param::B, Param::Dc, Param::F0, Param::Tau0, Param::SigmaN0, Param::Psi0]
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
    }

    pub fn unit(self) -> &'static str {
        match self {
            Param::Dc => "m",
            Param::Tau0 | Param::SigmaN0 => "MPa",
            _ => "1",
        }
    }

    /// Whether the parameter is a fault field (as opposed to a scalar).
    pub fn is_field(self) -> bool {
        self != Param::F0
    }
}

/// State derivatives of the friction force and state rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatePartials {
    pub f_v: f64,
    pub f_psi: f64,
    pub g_v: f64,
    pub g_psi: f64,
}

/// Slip velocity, state and characteristic data on the fault.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultKinematics {
    pub v_star: Vec<f64>,
    pub psi: Vec<f64>,
    pub tau_ell: Vec<f64>,
    pub kappa: Vec<f64>,
}

/// Shared intermediate quantities of one law evaluation.
struct Core {
    /// `asinh(V / q)` with `q = 2 V0 exp(-psi/a)`, signed like `V`.
    asinh: f64,
    /// `sqrt(V^2 + q^2)`.
    s: f64,
}

impl FrictionModel {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Checks sizes and sign constraints.
    pub fn validate(&self) -> Result<()> {
        let n = self.a.len();
        for (name, f) in [
            ("b", &self.b),
            ("dc", &self.dc),
            ("sigma_n0", &self.sigma_n0),
            ("tau0", &self.tau0),
            ("tau_l", &self.tau_l),
            ("psi0", &self.psi0),
        ] {
            if f.len() != n {
                return Err(Error::FrictionInvariant(format!("{name} has {} entries, expected {n}", f.len())));
            }
        }
        let positive = |name: &str, f: &[f64]| -> Result<()> {
            match f.iter().position(|v| !(*v > 0.0)) {
                Some(i) => Err(Error::FrictionInvariant(format!("{name} = {} at fault node {i} must be > 0", f[i]))),
                None => Ok(()),
            }
        };
        positive("a", &self.a)?;
        positive("dc", &self.dc)?;
        positive("sigma_n0", &self.sigma_n0)?;
        if !(self.v0 > 0.0) {
            return Err(Error::FrictionInvariant(format!("v0 = {} must be > 0", self.v0)));
        }
        for (name, f) in [("b", &self.b), ("tau0", &self.tau0), ("tau_l", &self.tau_l), ("psi0", &self.psi0)] {
            if let Some(i) = f.iter().position(|v| !v.is_finite()) {
                return Err(Error::FrictionInvariant(format!("{name} is not finite at fault node {i}")));
            }
        }
        Ok(())
    }

    /// Field of a parameter (scalars are broadcast).
    pub fn field(&self, p: Param) -> Vec<f64> {
        match p {
            Param::A => self.a.clone(),
            Param::B => self.b.clone(),
            Param::Dc => self.dc.clone(),
            Param::F0 => vec![self.f0; self.len()],
            Param::Tau0 => self.tau0.clone(),
            Param::SigmaN0 => self.sigma_n0.clone(),
            Param::Psi0 => self.psi0.clone(),
        }
    }

    /// Replaces a parameter field; `F0` takes the first value.
    pub fn set_field(&mut self, p: Param, values: Vec<f64>) {
        match p {
            Param::A => self.a = values,
            Param::B => self.b = values,
            Param::Dc => self.dc = values,
            Param::F0 => self.f0 = values[0],
            Param::Tau0 => self.tau0 = values,
            Param::SigmaN0 => self.sigma_n0 = values,
            Param::Psi0 => self.psi0 = values,
        }
    }

    #[inline]
    fn ln_q(&self, psi: f64, i: usize) -> f64 {
        (2.0 * self.v0).ln() - psi / self.a[i]
    }

    #[inline]
    fn core(&self, v: f64, psi: f64, i: usize) -> Core {
        let lq = self.ln_q(psi, i);
        let q = lq.exp();
        Core { asinh: asinh_scaled(v, lq), s: v.hypot(q) }
    }

    /// `f(|V|, psi) = a asinh(|V| exp(psi/a) / (2 V0))`.
    pub fn friction_coefficient(&self, v_abs: f64, psi: f64, i: usize) -> f64 {
        self.a[i] * asinh_scaled(v_abs.abs(), self.ln_q(psi, i))
    }

    /// Friction force `sigma f(|V|, psi) sign(V) - tau0 - tauL`.
    pub fn friction_force(&self, v: f64, psi: f64, i: usize) -> f64 {
        self.sigma_n0[i] * self.a[i] * asinh_scaled(v, self.ln_q(psi, i)) - self.tau0[i] - self.tau_l[i]
    }

    /// Steady-state friction coefficient.
    pub fn steady_state_coefficient(&self, v_abs: f64, i: usize) -> f64 {
        self.f0 + (self.a[i] - self.b[i]) * ln_ratio(v_abs, self.v0)
    }

    /// Slip-law state rate `-|V|/Dc (f - f_ss)`, zero at `V = 0`.
    pub fn state_rate(&self, v: f64, psi: f64, i: usize) -> f64 {
        let va = v.abs();
        if va == 0.0 {
            return 0.0;
        }
        -va / self.dc[i] * (self.friction_coefficient(va, psi, i) - self.steady_state_coefficient(va, i))
    }

    /// `F_V`, `F_psi`, `G_V`, `G_psi`.
    pub fn partials(&self, v: f64, psi: f64, i: usize) -> StatePartials {
        let c = self.core(v, psi, i);
        let (a, sigma) = (self.a[i], self.sigma_n0[i]);
        let f_v = sigma * a / c.s;
        let f_psi = sigma * v / c.s;
        let va = v.abs();
        if va == 0.0 {
            return StatePartials { f_v, f_psi, g_v: 0.0, g_psi: 0.0 };
        }
        let dc = self.dc[i];
        let f = a * c.asinh.abs();
        let fss = self.steady_state_coefficient(va, i);
        let g_v = -v.signum() / dc * ((f - fss) + va * a / c.s - (a - self.b[i]));
        let g_psi = -va / dc * (va / c.s);
        StatePartials { f_v, f_psi, g_v, g_psi }
    }

    /// `(F_p, G_p)` for a parameter. The initial state does not enter the laws.
    pub fn param_partials(&self, v: f64, psi: f64, i: usize, p: Param) -> (f64, f64) {
        let va = v.abs();
        let dc = self.dc[i];
        let log_v = if va > 0.0 { ln_ratio(va, self.v0) } else { 0.0 };
        match p {
            Param::A => {
                if va == 0.0 {
                    return (0.0, 0.0);
                }
                // asinh(x) - psi/a |V|/s = D(x) + ln(|V|/V0) + psi/a (1 - |V|/s),
                // with both corrections nonnegative; the direct form cancels.
                let lq = self.ln_q(psi, i);
                let q = lq.exp();
                let s = va.hypot(q);
                let tail = psi / self.a[i] * q * q / (s * (s + va));
                let d = asinh_excess(va, lq);
                (self.sigma_n0[i] * (d + log_v + tail) * v.signum(), -va / dc * (d + tail))
            }
            Param::B => (0.0, -va / dc * log_v),
            Param::Dc => (0.0, -self.state_rate(v, psi, i) / dc),
            Param::F0 => (0.0, va / dc),
            Param::Tau0 => (-1.0, 0.0),
            Param::SigmaN0 => (self.a[i] * asinh_scaled(v, self.ln_q(psi, i)), 0.0),
            Param::Psi0 => (0.0, 0.0),
        }
    }

    /// Closed-form solution of `F(V, psi) = -tau_ell`.
    pub fn v_tilde_star(&self, tau_ell: f64, psi: f64, i: usize) -> f64 {
        let arg = (self.tau0[i] + self.tau_l[i] - tau_ell) / (self.sigma_n0[i] * self.a[i]);
        2.0 * self.v0 * arg.sinh() * (-psi / self.a[i]).exp()
    }

    /// Bisection for `kappa V + F(V, psi) = -tau_ell` to bracket width `tol`.
    pub fn solve_v_star(&self, kappa: f64, tau_ell: f64, psi: f64, i: usize, tol: f64) -> Result<f64> {
        let drive = self.tau0[i] + self.tau_l[i] - tau_ell;
        if drive == 0.0 {
            return Ok(0.0);
        }
        let sigma = self.sigma_n0[i];
        if sigma == 0.0 {
            return Ok(drive / kappa);
        }
        let lin = drive / kappa;
        let vt = self.v_tilde_star(tau_ell, psi, i);
        let (mut lo, mut hi) = if drive > 0.0 {
            (0.0, if vt.is_finite() { vt.min(lin) } else { lin })
        } else {
            (if vt.is_finite() { vt.max(lin) } else { lin }, 0.0)
        };
        let lq = self.ln_q(psi, i);
        let sa = sigma * self.a[i];
        let offset = tau_ell - self.tau0[i] - self.tau_l[i];
        let phi = |v: f64| kappa * v + sa * asinh_scaled(v, lq) + offset;
        let (r_lo, r_hi) = (phi(lo), phi(hi));
        let slack = 16.0 * f64::EPSILON * (offset.abs() + self.tau0[i].abs() + self.tau_l[i].abs() + kappa * lin.abs());
        if r_lo > slack || r_hi < -slack {
            return Err(Error::BracketViolation { index: i, lo, hi, r_lo, r_hi });
        }
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if phi(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Solves for every fault node of `kin`, writing into `kin.v_star`.
    pub fn solve_v_star_all(&self, kin: &mut FaultKinematics, tol: f64) -> Result<()> {
        for i in 0..self.len() {
            kin.v_star[i] = self.solve_v_star(kin.kappa[i], kin.tau_ell[i], kin.psi[i], i, tol)?;
        }
        Ok(())
    }
}

/// Adjoint slip velocity `-(tau_ell_dag + G_V psi_dag) / (kappa + F_V)`.
pub fn solve_v_star_adjoint(kappa: f64, tau_ell_dag: f64, f_v: f64, g_v: f64, psi_dag: f64, i: usize) -> Result<f64> {
    let den = kappa + f_v;
    if !(den > 0.0) {
        return Err(Error::AdjointDenominator(den, i));
    }
    Ok(-(tau_ell_dag + g_v * psi_dag) / den)
}

/// `ln(x / y)`, keeping relative accuracy when `x` is close to `y`.
pub fn ln_ratio(x: f64, y: f64) -> f64 {
    let r = x / y;
    if (0.5..=2.0).contains(&r) {
        ((x - y) / y).ln_1p()
    } else {
        r.ln()
    }
}

/// `asinh(x) - ln(2x)` for `x = |V| / q`, accurate when it is tiny.
pub fn asinh_excess(v_abs: f64, ln_q: f64) -> f64 {
    let lx = v_abs.ln() - ln_q;
    if lx < 0.0 {
        return asinh_scaled(v_abs, ln_q) - (lx + LN_2);
    }
    let r2 = (-2.0 * lx).exp();
    (0.5 * r2 / ((1.0 + r2).sqrt() + 1.0)).ln_1p()
}

/// `asinh(V / q)` given `ln q`, without overflow for large `|V|/q`.
#[inline]
pub fn asinh_scaled(v: f64, ln_q: f64) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    let lx = v.abs().ln() - ln_q;
    let r = if lx > 20.0 {
        lx + LN_2 + 0.25 * (-2.0 * lx).exp()
    } else {
        lx.exp().asinh()
    };
    r.copysign(v)
}
