//! TOML run configuration and assembly of a ready-to-run problem.

use crate::error::{Error, Result};
use crate::forward::{uniform_steps, Material, SchemeOptions, SimState, System};
use crate::friction::{FrictionModel, Param};
use crate::geometry::{build_grid, default_n_across, fault_normal_shear_projection, make_fractal_profile, CurvilinearGrid, Domain, FaultProfile};
use crate::lbfgs::LbfgsOptions;
use crate::receivers::{rectangle_layout, MisfitKind, ReceiverSet, Window};
use crate::sbp::{InterpolationPair, Sbp1d};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        DomainConfig { x_min: -15.0, x_max: 15.0, y_min: -15.0, y_max: 15.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Planar,
    Fractal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultConfig {
    pub kind: FaultKind,
    pub amplitude_ratio: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub seed: u64,
}

impl Default for FaultConfig {
    fn default() -> Self {
        FaultConfig { kind: FaultKind::Planar, amplitude_ratio: 1e-2, lambda_min: 3.0, lambda_max: 30.0, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialConfig {
    /// g/cm^3
    pub rho: f64,
    /// GPa
    pub mu: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        MaterialConfig { rho: 2.67, mu: 32.0381 }
    }
}

/// Piecewise-constant override on `x_min <= x <= x_max`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrictionConfig {
    pub a: f64,
    pub b: f64,
    /// m
    pub dc: f64,
    pub f0: f64,
    /// m/s
    pub v0: f64,
    /// MPa
    pub sigma_n0: f64,
    /// Remote shear stress in MPa, resolved with the fault normal.
    pub sigma_yz0: f64,
    pub psi0: f64,
    /// Initial particle velocity magnitude in m/s (`-v` below, `+v` above the fault).
    pub v_init: f64,
    pub regions: Vec<Region>,
}

impl Default for FrictionConfig {
    fn default() -> Self {
        FrictionConfig {
            a: 0.013,
            b: 0.011,
            dc: 1.0,
            f0: 0.6,
            v0: 1e-6,
            sigma_n0: 120.0,
            sigma_yz0: 72.0,
            psi0: 0.7243,
            v_init: 5e-13,
            regions: vec![Region { x_min: -5.0, x_max: 6.0, a: Some(0.009), b: None, dc: Some(0.2) }],
        }
    }
}

/// Gaussian loading `A exp(-(x - x_c)^2 / 2 d^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadingConfig {
    pub amplitude: f64,
    pub x_c: f64,
    pub d: f64,
}

impl Default for LoadingConfig {
    fn default() -> Self {
        LoadingConfig { amplitude: 25.0, x_c: 3.0, d: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    NonReflecting,
    TractionFree,
    Rigid,
}

impl BoundaryKind {
    pub fn reflection(self) -> f64 {
        match self {
            BoundaryKind::NonReflecting => 0.0,
            BoundaryKind::TractionFree => 1.0,
            BoundaryKind::Rigid => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscretizationConfig {
    pub m: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_across: Option<usize>,
    pub order: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Used when `dt` is absent: `dt = cfl * h_min / c_s`.
    pub cfl: f64,
    pub t_end: f64,
    /// Bisection tolerance for the slip velocity in m/s.
    pub v_tol: f64,
    pub penalty: f64,
    pub remainder: bool,
    /// Exact metrics for planar faults instead of differentiated coordinates.
    pub cartesian: bool,
    pub boundary: BoundaryKind,
    pub locked: bool,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        DiscretizationConfig {
            m: 101,
            n_across: None,
            order: 4,
            dt: Some(0.005),
            cfl: 0.25,
            t_end: 6.0,
            v_tol: 1e-13,
            penalty: 2.5,
            remainder: false,
            cartesian: false,
            boundary: BoundaryKind::NonReflecting,
            locked: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReceiverConfig {
    /// Outer rectangle `[x0, x1, y0, y1]` in km.
    pub outer: [f64; 4],
    /// Excluded open rectangle.
    pub inner: [f64; 4],
    pub spacing: f64,
    /// Explicit positions appended to the lattice.
    pub extra: Vec<[f64; 2]>,
    pub kind: MisfitKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<Window>,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        ReceiverConfig {
            outer: [-9.0, 9.0, -9.0, 9.0],
            inner: [-7.0, 7.0, -3.0, 3.0],
            spacing: 2.0,
            extra: Vec::new(),
            kind: MisfitKind::Velocity,
            window: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpolationKind {
    /// Exact on linears in both directions and norm-adjoint.
    Sbp,
    /// Plain piecewise-linear prolongation.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    pub param: Param,
    pub m_p: usize,
    pub interpolation: InterpolationKind,
    /// Constant initial guess; `None` starts from the true field.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_iterations: usize,
    pub gradient_tol: f64,
    /// First trial step as a fraction of the largest initial component.
    pub first_step: f64,
    pub snapshot_every: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            param: Param::A,
            m_p: 11,
            interpolation: InterpolationKind::Sbp,
            initial: Some(0.0135),
            lower: Some(1e-4),
            upper: None,
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            max_iterations: 100,
            gradient_tol: 1e-12,
            first_step: 0.1,
            snapshot_every: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub param: Param,
    /// log10 of the smallest and largest absolute perturbation.
    pub log10_delta: [f64; 2],
    pub count: usize,
    pub threshold: f64,
    /// The check runs at this multiple of the restricted true field.
    pub initial_factor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { param: Param::A, log10_delta: [-12.0, -5.0], count: 15, threshold: 1e-4, initial_factor: 1.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Record every n-th stage of the slip-velocity history.
    pub vstar_every: usize,
    /// Times at which slip profiles are written.
    pub slip_times: Vec<f64>,
    /// Times at which velocity snapshots are written.
    pub snapshot_times: Vec<f64>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { vstar_every: 20, slip_times: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], snapshot_times: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub material: MaterialConfig,
    pub fault: FaultConfig,
    pub friction: FrictionConfig,
    pub loading: LoadingConfig,
    pub discretization: DiscretizationConfig,
    pub receivers: ReceiverConfig,
    pub inversion: InversionConfig,
    pub grad_check: GradCheckConfig,
    pub output: OutputConfig,
}

/// Everything needed for a forward or adjoint run.
#[derive(Debug, Clone)]
pub struct Setup {
    pub system: System,
    pub model: FrictionModel,
    pub receivers: ReceiverSet,
    pub steps: Vec<f64>,
    pub initial: SimState,
    pub locked: bool,
    pub v_tol: f64,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<RunConfig> {
        let c: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let s = std::fs::read_to_string(path)?;
        let c: RunConfig =
            toml::from_str(&s).map_err(|e| Error::Parse { path: path.display().to_string(), msg: e.to_string() })?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Canonical JSON with sorted keys.
    pub fn canonical_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&v).expect("value serializes")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let d = Sha256::digest(self.canonical_json().as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        if !(d.x_max > d.x_min && d.y_max > 0.0 && d.y_min < 0.0) {
            return Err(Error::Config("domain: need x_max > x_min and y_min < 0 < y_max".into()));
        }
        let z = &self.discretization;
        if ![2, 4, 6].contains(&z.order) {
            return Err(Error::Config(format!("discretization.order: {} is not one of 2, 4, 6", z.order)));
        }
        if !(z.t_end > 0.0) {
            return Err(Error::Config("discretization.t_end must be positive".into()));
        }
        if let Some(dt) = z.dt {
            if !(dt > 0.0) {
                return Err(Error::Config("discretization.dt must be positive".into()));
            }
        }
        if !(z.v_tol > 0.0) {
            return Err(Error::Config("discretization.v_tol must be positive".into()));
        }
        if !(self.material.rho > 0.0 && self.material.mu > 0.0) {
            return Err(Error::Config("material: rho and mu must be positive".into()));
        }
        if !(self.receivers.spacing > 0.0) {
            return Err(Error::Config("receivers.spacing must be positive".into()));
        }
        let inv = &self.inversion;
        if let (Some(lo), Some(hi)) = (inv.lower, inv.upper) {
            if lo > hi {
                return Err(Error::Config("inversion: lower bound exceeds upper bound".into()));
            }
        }
        if inv.m_p < 2 || inv.m_p > z.m {
            return Err(Error::Config(format!("inversion.m_p = {} must lie in [2, {}]", inv.m_p, z.m)));
        }
        if !(inv.first_step > 0.0) {
            return Err(Error::Config("inversion.first_step must be positive".into()));
        }
        if inv.memory == 0 {
            return Err(Error::Config("inversion.memory must be at least 1".into()));
        }
        Ok(())
    }

    pub fn domain(&self) -> Domain {
        let d = &self.domain;
        Domain { x_min: d.x_min, x_max: d.x_max, y_min: d.y_min, y_max: d.y_max }
    }

    pub fn profile(&self) -> Result<FaultProfile> {
        let z = &self.discretization;
        let dx = (self.domain.x_min, self.domain.x_max);
        match self.fault.kind {
            FaultKind::Planar => FaultProfile::planar(z.m, dx, z.order),
            FaultKind::Fractal => make_fractal_profile(
                z.m,
                dx,
                self.fault.amplitude_ratio,
                (self.fault.lambda_min, self.fault.lambda_max),
                self.fault.seed,
                z.order,
            ),
        }
    }

    pub fn grid(&self) -> Result<CurvilinearGrid> {
        let z = &self.discretization;
        let domain = self.domain();
        let n_across = z.n_across.unwrap_or_else(|| default_n_across(z.m, &domain));
        if z.cartesian {
            if self.fault.kind != FaultKind::Planar {
                return Err(Error::Config("discretization.cartesian requires a planar fault".into()));
            }
            return CurvilinearGrid::cartesian(z.m, domain, n_across, z.order);
        }
        build_grid(&self.profile()?, domain, n_across)
    }

    /// Friction parameters on the fault nodes of `grid`.
    pub fn friction_model(&self, grid: &CurvilinearGrid) -> Result<FrictionModel> {
        let f = &self.friction;
        let x = &grid.profile.x_coords;
        let m = x.len();
        let mut a = vec![f.a; m];
        let mut b = vec![f.b; m];
        let mut dc = vec![f.dc; m];
        for r in &f.regions {
            for i in 0..m {
                if x[i] >= r.x_min && x[i] <= r.x_max {
                    if let Some(v) = r.a {
                        a[i] = v;
                    }
                    if let Some(v) = r.b {
                        b[i] = v;
                    }
                    if let Some(v) = r.dc {
                        dc[i] = v;
                    }
                }
            }
        }
        let l = &self.loading;
        let tau_l = x.iter().map(|&x| l.amplitude * (-(x - l.x_c).powi(2) / (2.0 * l.d * l.d)).exp()).collect();
        let model = FrictionModel {
            a,
            b,
            dc,
            f0: f.f0,
            v0: f.v0,
            sigma_n0: vec![f.sigma_n0; m],
            tau0: fault_normal_shear_projection(&grid.profile, f.sigma_yz0),
            tau_l,
            psi0: vec![f.psi0; m],
        };
        model.validate()?;
        Ok(model)
    }

    pub fn receiver_positions(&self) -> Vec<(f64, f64)> {
        let r = &self.receivers;
        let mut p = rectangle_layout(r.outer, r.inner, r.spacing);
        p.extend(r.extra.iter().map(|q| (q[0], q[1])));
        p
    }

    pub fn system(&self) -> Result<System> {
        let z = &self.discretization;
        let mat = Material { rho: self.material.rho, mu: self.material.mu };
        let r = z.boundary.reflection();
        let opts = SchemeOptions { remainder: z.remainder, penalty: z.penalty };
        System::new(self.grid()?, [mat; 2], [[r; 4]; 2], opts)
    }

    /// Coarse/fine pair for the inverted field; identity when `m_p = m`.
    pub fn interpolation(&self) -> Result<InterpolationPair> {
        let z = &self.discretization;
        let interval = (self.domain.x_min, self.domain.x_max);
        let norm = |n: usize, order: usize| Sbp1d::new(n, (interval.1 - interval.0) / (n - 1) as f64, order).map(|o| o.norm);
        let fine = norm(z.m, z.order)?;
        let m_p = self.inversion.m_p;
        if m_p == z.m {
            return Ok(InterpolationPair::identity(interval, fine));
        }
        let coarse = norm(m_p, 4)?;
        match self.inversion.interpolation {
            InterpolationKind::Sbp => InterpolationPair::build(interval, coarse, fine),
            InterpolationKind::Linear => InterpolationPair::linear(interval, coarse, fine),
        }
    }

    /// Starting iterate: the configured constant, or the restricted true field.
    pub fn initial_guess(&self, model: &FrictionModel, interp: &InterpolationPair) -> Vec<f64> {
        match self.inversion.initial {
            Some(c) => vec![c; interp.coarse_len()],
            None => interp.to_coarse(&model.field(self.inversion.param)),
        }
    }

    pub fn lbfgs_options(&self, initial: &[f64]) -> LbfgsOptions {
        let inv = &self.inversion;
        let n = initial.len();
        let scale = initial.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        LbfgsOptions {
            memory: inv.memory,
            c1: inv.c1,
            c2: inv.c2,
            max_iterations: inv.max_iterations,
            gradient_tol: inv.gradient_tol,
            first_step: (scale > 0.0).then_some(inv.first_step * scale),
            lower: inv.lower.map(|v| vec![v; n]),
            upper: inv.upper.map(|v| vec![v; n]),
            ..LbfgsOptions::default()
        }
    }

    pub fn build(&self) -> Result<Setup> {
        self.validate()?;
        let system = self.system()?;
        let model = self.friction_model(&system.grid)?;
        let r = &self.receivers;
        let receivers = ReceiverSet::new(&system.grid, &system.ops, &self.receiver_positions(), r.kind, r.window)?;
        let z = &self.discretization;
        let dt = z.dt.unwrap_or_else(|| system.cfl_dt(z.cfl));
        let steps = uniform_steps(z.t_end, dt)?;
        let v = self.friction.v_init;
        let initial = system.initial_state(-v, v, &model.psi0)?;
        Ok(Setup { system, model, receivers, steps, initial, locked: z.locked, v_tol: z.v_tol })
    }
}
