//! Two-block semi-discrete system with characteristic boundary and fault
//! conditions, RK4 time stepping and stage histories.

use crate::error::{Error, Result};
use crate::friction::FrictionModel;
use crate::geometry::CurvilinearGrid;
use crate::receivers::{MisfitKind, ReceiverSet};
use crate::sbp::{BlockOperator, BlockWork, Side, SIDES};
use serde::{Deserialize, Serialize};

/// RK4 stage nodes.
pub const RK_C: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
/// RK4 weights.
pub const RK_B: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];
/// Stage coupling `Y_s = y_n + dt RK_A[s] k_{s-1}`.
pub const RK_A: [f64; 4] = [0.0, 0.5, 0.5, 1.0];

pub const MINUS: usize = 0;
pub const PLUS: usize = 1;
/// Fault edge of each block.
pub const FAULT_SIDE: [Side; 2] = [Side::EtaMax, Side::EtaMin];

const INSTABILITY_FACTOR: f64 = 1e10;

/// Density in g/cm^3 and shear modulus in GPa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub rho: f64,
    pub mu: f64,
}

impl Material {
    /// Shear wave speed in km/s.
    pub fn shear_speed(&self) -> f64 {
        (self.mu / self.rho).sqrt()
    }

    /// Impedance in MPa s/m.
    pub fn impedance(&self) -> f64 {
        (self.rho * self.mu).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeOptions {
    /// Add the artificial-dissipation remainder to the second-derivative operators.
    pub remainder: bool,
    /// Multiplier of the Dirichlet penalty.
    pub penalty: f64,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        SchemeOptions { remainder: false, penalty: 2.5 }
    }
}

/// Fields of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Boundary target displacement per side, indexed by [`Side::index`].
    pub ustar: [Vec<f64>; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub blocks: [BlockState; 2],
    pub psi: Vec<f64>,
}

impl SimState {
    fn parts(&self) -> Vec<&[f64]> {
        let mut p: Vec<&[f64]> = Vec::with_capacity(13);
        for b in &self.blocks {
            p.push(&b.u);
            p.push(&b.v);
            for s in &b.ustar {
                p.push(s);
            }
        }
        p.push(&self.psi);
        p
    }

    fn parts_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p: Vec<&mut [f64]> = Vec::with_capacity(13);
        let (b0, b1) = self.blocks.split_at_mut(1);
        for b in [&mut b0[0], &mut b1[0]] {
            p.push(&mut b.u);
            p.push(&mut b.v);
            for s in b.ustar.iter_mut() {
                p.push(s);
            }
        }
        p.push(&mut self.psi);
        p
    }

    /// `self = x + c y`.
    pub fn assign_axpy(&mut self, x: &SimState, c: f64, y: &SimState) {
        for ((o, a), b) in self.parts_mut().into_iter().zip(x.parts()).zip(y.parts()) {
            for ((o, a), b) in o.iter_mut().zip(a).zip(b) {
                *o = a + c * b;
            }
        }
    }

    /// `self += c x`.
    pub fn axpy(&mut self, c: f64, x: &SimState) {
        for (o, a) in self.parts_mut().into_iter().zip(x.parts()) {
            for (o, a) in o.iter_mut().zip(a) {
                *o += c * a;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for o in self.parts_mut() {
            o.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn fill(&mut self, value: f64) {
        for o in self.parts_mut() {
            o.iter_mut().for_each(|v| *v = value);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.parts().iter().flat_map(|p| p.iter()).fold(0.0, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) })
    }

    /// Euclidean inner product over every component.
    pub fn dot(&self, other: &SimState) -> f64 {
        self.parts().iter().zip(other.parts()).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()).sum()
    }

    /// Slip `u*+ - u*-` along the fault.
    pub fn slip(&self) -> Vec<f64> {
        let p = &self.blocks[PLUS].ustar[FAULT_SIDE[PLUS].index()];
        let m = &self.blocks[MINUS].ustar[FAULT_SIDE[MINUS].index()];
        p.iter().zip(m).map(|(a, b)| a - b).collect()
    }
}

/// Fault condition inside the right-hand side.
pub trait FaultLaw {
    /// Given `kappa V + F = -tau_ell`, fills `v_star`, the force `F` and the state rate.
    fn resolve(
        &mut self,
        stage: usize,
        psi: &[f64],
        kappa: &[f64],
        tau_ell: &[f64],
        v_star: &mut [f64],
        force: &mut [f64],
        psi_rate: &mut [f64],
    ) -> Result<()>;
}

/// Rate-and-state friction with the bisection solve.
pub struct RateState<'a> {
    pub model: &'a FrictionModel,
    pub tol: f64,
}

impl FaultLaw for RateState<'_> {
    fn resolve(
        &mut self,
        _stage: usize,
        psi: &[f64],
        kappa: &[f64],
        tau_ell: &[f64],
        v_star: &mut [f64],
        force: &mut [f64],
        psi_rate: &mut [f64],
    ) -> Result<()> {
        for i in 0..psi.len() {
            let v = self.model.solve_v_star(kappa[i], tau_ell[i], psi[i], i, self.tol)?;
            v_star[i] = v;
            force[i] = self.model.friction_force(v, psi[i], i);
            psi_rate[i] = self.model.state_rate(v, psi[i], i);
        }
        Ok(())
    }
}

/// Welded interface: no slip, state frozen.
pub struct Locked;

impl FaultLaw for Locked {
    fn resolve(
        &mut self,
        _stage: usize,
        _psi: &[f64],
        _kappa: &[f64],
        tau_ell: &[f64],
        v_star: &mut [f64],
        force: &mut [f64],
        psi_rate: &mut [f64],
    ) -> Result<()> {
        for i in 0..tau_ell.len() {
            v_star[i] = 0.0;
            force[i] = -tau_ell[i];
            psi_rate[i] = 0.0;
        }
        Ok(())
    }
}

/// Body force density in MPa/km added to the momentum equation.
pub trait BodyForce {
    fn add(&self, t: f64, stage: usize, block: usize, out: &mut [f64]);
}

/// Scratch for one right-hand-side evaluation.
#[derive(Debug, Clone)]
pub struct RhsWork {
    pub blocks: [BlockWork; 2],
    acc: [Vec<f64>; 2],
    edge: [Vec<f64>; 4],
    fault_vb: [Vec<f64>; 2],
    fault_tt: [Vec<f64>; 2],
    pub tau_ell: Vec<f64>,
    pub force: Vec<f64>,
    /// Slip velocity from the latest evaluation.
    pub v_star: Vec<f64>,
    psi_rate: Vec<f64>,
}

/// Discretized two-block problem.
#[derive(Debug, Clone)]
pub struct System {
    pub grid: CurvilinearGrid,
    pub ops: [BlockOperator; 2],
    pub material: [Material; 2],
    /// Reflection coefficient per block and side; fault entries are unused.
    pub reflection: [[f64; 4]; 2],
    /// Fault quadrature `H_Gamma`.
    pub h_fault: Vec<f64>,
    pub kappa: Vec<f64>,
    pub options: SchemeOptions,
}

impl System {
    pub fn new(
        grid: CurvilinearGrid,
        material: [Material; 2],
        reflection: [[f64; 4]; 2],
        options: SchemeOptions,
    ) -> Result<System> {
        for r in reflection.iter().flatten() {
            if !(-1.0..=1.0).contains(r) {
                return Err(Error::InvalidArgument(format!("reflection coefficient {r} outside [-1, 1]")));
            }
        }
        let mk = |b: usize| {
            let g = &grid.blocks[b];
            let mu = vec![material[b].mu; g.nx * g.ny];
            BlockOperator::new(g, &mu, grid.order, options.remainder, options.penalty)
        };
        let ops = [mk(MINUS)?, mk(PLUS)?];
        let h_fault = ops[MINUS].edge(FAULT_SIDE[MINUS]).m.clone();
        let (zm, zp) = (material[MINUS].impedance(), material[PLUS].impedance());
        let kappa = vec![zp * zm / (zp + zm); h_fault.len()];
        Ok(System { grid, ops, material, reflection, h_fault, kappa, options })
    }

    pub fn n_fault(&self) -> usize {
        self.h_fault.len()
    }

    pub fn fault_x(&self) -> &[f64] {
        &self.grid.profile.x_coords
    }

    pub fn impedance(&self, b: usize) -> f64 {
        self.material[b].impedance()
    }

    /// Step size `fraction * h_min / c_s`.
    pub fn cfl_dt(&self, fraction: f64) -> f64 {
        let c = self.material.iter().map(|m| m.shear_speed()).fold(0.0, f64::max);
        fraction * self.grid.h_min() / c
    }

    pub fn zero_state(&self) -> SimState {
        let block = |op: &BlockOperator| BlockState {
            u: vec![0.0; op.len()],
            v: vec![0.0; op.len()],
            ustar: std::array::from_fn(|s| vec![0.0; op.edges[s].len()]),
        };
        SimState { blocks: [block(&self.ops[0]), block(&self.ops[1])], psi: vec![0.0; self.n_fault()] }
    }

    /// Uniform velocities per block, zero displacement, `u* = u` on all edges.
    pub fn initial_state(&self, v_minus: f64, v_plus: f64, psi0: &[f64]) -> Result<SimState> {
        if psi0.len() != self.n_fault() {
            return Err(Error::InvalidArgument(format!("{} state values for {} fault nodes", psi0.len(), self.n_fault())));
        }
        let mut s = self.zero_state();
        s.blocks[MINUS].v.iter_mut().for_each(|v| *v = v_minus);
        s.blocks[PLUS].v.iter_mut().for_each(|v| *v = v_plus);
        s.psi.copy_from_slice(psi0);
        Ok(s)
    }

    pub fn workspace(&self) -> RhsWork {
        let ne = self.ops.iter().flat_map(|o| o.edges.iter().map(|e| e.len())).max().unwrap_or(0);
        let m = self.n_fault();
        RhsWork {
            blocks: [self.ops[0].workspace(), self.ops[1].workspace()],
            acc: [vec![0.0; self.ops[0].len()], vec![0.0; self.ops[1].len()]],
            edge: std::array::from_fn(|_| vec![0.0; ne]),
            fault_vb: [vec![0.0; m], vec![0.0; m]],
            fault_tt: [vec![0.0; m], vec![0.0; m]],
            tau_ell: vec![0.0; m],
            force: vec![0.0; m],
            v_star: vec![0.0; m],
            psi_rate: vec![0.0; m],
        }
    }

    /// `out = A(t, state)`; slip velocity is left in `work.v_star`.
    pub fn rhs(
        &self,
        t: f64,
        stage: usize,
        state: &SimState,
        law: &mut dyn FaultLaw,
        forcing: Option<&dyn BodyForce>,
        out: &mut SimState,
        work: &mut RhsWork,
    ) -> Result<()> {
        for b in 0..2 {
            let op = &self.ops[b];
            let st = &state.blocks[b];
            let z = self.impedance(b);
            let bw = &mut work.blocks[b];
            op.fluxes(&st.u, bw);
            op.neg_stiffness(&st.u, bw, &mut work.acc[b]);
            if let Some(f) = forcing {
                let acc = &mut work.acc[b];
                let mut fb = vec![0.0; op.len()];
                f.add(t, stage, b, &mut fb);
                for k in 0..op.len() {
                    acc[k] += op.hvol[k] * fb[k];
                }
            }
            out.blocks[b].u.copy_from_slice(&st.v);
            for side in SIDES {
                let e = op.edge(side);
                let n = e.len();
                let [tr, ub, vb, d] = &mut work.edge;
                op.traction(side, bw, &mut tr[..n]);
                op.restrict(side, &st.u, &mut ub[..n]);
                op.restrict(side, &st.v, &mut vb[..n]);
                let us = &st.ustar[side.index()];
                for q in 0..n {
                    d[q] = us[q] - ub[q];
                    tr[q] += e.gamma[q] * d[q];
                    ub[q] = -e.m[q] * d[q];
                }
                op.add_traction_transpose(side, &ub[..n], &mut work.acc[b]);
                if side == FAULT_SIDE[b] {
                    work.fault_vb[b].copy_from_slice(&vb[..n]);
                    work.fault_tt[b].copy_from_slice(&tr[..n]);
                    continue;
                }
                let r = self.reflection[b][side.index()];
                let rate = &mut out.blocks[b].ustar[side.index()];
                for q in 0..n {
                    let w = z * vb[q] - tr[q];
                    rate[q] = 0.5 * (r + 1.0) / z * w;
                    ub[q] = e.m[q] * 0.5 * (r - 1.0) * w;
                }
                op.add_lift(side, &ub[..n], &mut work.acc[b]);
            }
        }
        let (zm, zp) = (self.impedance(MINUS), self.impedance(PLUS));
        let m = self.n_fault();
        let [wm, wp, lift, _] = &mut work.edge;
        for i in 0..m {
            wm[i] = zm * work.fault_vb[MINUS][i] - work.fault_tt[MINUS][i];
            wp[i] = zp * work.fault_vb[PLUS][i] - work.fault_tt[PLUS][i];
            work.tau_ell[i] = (zp * wm[i] - zm * wp[i]) / (zp + zm);
        }
        law.resolve(stage, &state.psi, &self.kappa, &work.tau_ell, &mut work.v_star, &mut work.force, &mut work.psi_rate)?;
        out.psi.copy_from_slice(&work.psi_rate);
        for (b, sign, z, w) in [(MINUS, 1.0, zm, &*wm), (PLUS, -1.0, zp, &*wp)] {
            let side = FAULT_SIDE[b];
            let op = &self.ops[b];
            let e = op.edge(side);
            let rate = &mut out.blocks[b].ustar[side.index()];
            for i in 0..m {
                let ts = sign * work.force[i];
                rate[i] = (w[i] + ts) / z;
                lift[i] = e.m[i] * ts;
            }
            op.add_lift(side, &lift[..m], &mut work.acc[b]);
        }
        for b in 0..2 {
            let op = &self.ops[b];
            let rho = self.material[b].rho;
            for ((o, a), h) in out.blocks[b].v.iter_mut().zip(&work.acc[b]).zip(&op.hvol) {
                *o = a / (rho * h);
            }
        }
        Ok(())
    }

    /// Mechanical energy `1/2 v^T rho H v + 1/2 u^T S u + boundary penalty terms`.
    pub fn energy(&self, state: &SimState, work: &mut RhsWork) -> f64 {
        let mut e = 0.0;
        for b in 0..2 {
            let op = &self.ops[b];
            let st = &state.blocks[b];
            let rho = self.material[b].rho;
            let bw = &mut work.blocks[b];
            op.fluxes(&st.u, bw);
            e += 0.5 * st.v.iter().zip(&op.hvol).map(|(v, h)| rho * h * v * v).sum::<f64>();
            e += 0.5 * op.stiffness_energy(&st.u, bw);
            for side in SIDES {
                let edge = op.edge(side);
                let n = edge.len();
                let [tr, ub, _, _] = &mut work.edge;
                op.traction(side, bw, &mut tr[..n]);
                op.restrict(side, &st.u, &mut ub[..n]);
                let us = &st.ustar[side.index()];
                for q in 0..n {
                    let d = us[q] - ub[q];
                    e += edge.m[q] * (d * tr[q] + 0.5 * edge.gamma[q] * d * d);
                }
            }
        }
        e
    }

    /// Work done by prestress and loading on the slip accumulated since `slip0`.
    pub fn prestress_work(&self, state: &SimState, slip0: &[f64], model: &FrictionModel) -> f64 {
        let slip = state.slip();
        (0..self.n_fault())
            .map(|i| self.h_fault[i] * (model.tau0[i] + model.tau_l[i]) * (slip[i] - slip0[i]))
            .sum()
    }

    /// Classical RK4 over `steps`, calling `on_stage` at every stage before the update.
    #[allow(clippy::too_many_arguments)]
    pub fn integrate(
        &self,
        state0: SimState,
        t0: f64,
        steps: &[f64],
        law: &mut dyn FaultLaw,
        forcing: Option<&dyn BodyForce>,
        mut on_stage: impl FnMut(&StageRecord) -> Result<()>,
    ) -> Result<SimState> {
        let limit = INSTABILITY_FACTOR * state0.max_abs().max(1.0);
        let mut work = self.workspace();
        let mut y = state0;
        let mut ys = y.clone();
        let mut k = y.clone();
        let mut acc = y.clone();
        let mut t = t0;
        for (n, &dt) in steps.iter().enumerate() {
            for s in 0..4 {
                if s > 0 {
                    ys.assign_axpy(&y, RK_A[s] * dt, &k);
                }
                let yst = if s == 0 { &y } else { &ys };
                let ts = t + RK_C[s] * dt;
                let g = 4 * n + s;
                self.rhs(ts, g, yst, law, forcing, &mut k, &mut work)?;
                on_stage(&StageRecord { global: g, step: n, stage: s, time: ts, dt, state: yst, v_star: &work.v_star })?;
                if s == 0 {
                    acc.clone_from(&k);
                    acc.scale(RK_B[0]);
                } else {
                    acc.axpy(RK_B[s], &k);
                }
            }
            y.axpy(dt, &acc);
            t += dt;
            let norm = y.max_abs();
            if !(norm <= limit) {
                return Err(Error::Unstable { step: n + 1, time: t, norm, limit });
            }
        }
        Ok(y)
    }
}

/// One RK stage as seen by a recorder.
pub struct StageRecord<'a> {
    pub global: usize,
    pub step: usize,
    pub stage: usize,
    pub time: f64,
    pub dt: f64,
    pub state: &'a SimState,
    pub v_star: &'a [f64],
}

/// Per-stage fault coefficients and receiver series of a forward run.
#[derive(Debug, Clone, PartialEq)]
pub struct StageHistory {
    pub t0: f64,
    pub step_sizes: Vec<f64>,
    pub n_fault: usize,
    /// `4N x n_fault`, stage-major.
    pub v_star: Vec<f64>,
    pub psi: Vec<f64>,
    /// Receiver samples, `[receiver][stage]`.
    pub measurements: Vec<Vec<f64>>,
    /// Windowed residuals `w (m - d)`, `[receiver][stage]`.
    pub residuals: Vec<Vec<f64>>,
}

impl StageHistory {
    pub fn new(t0: f64, step_sizes: Vec<f64>, n_fault: usize, n_receivers: usize) -> StageHistory {
        let ns = 4 * step_sizes.len();
        StageHistory {
            t0,
            n_fault,
            v_star: Vec::with_capacity(ns * n_fault),
            psi: Vec::with_capacity(ns * n_fault),
            measurements: vec![Vec::with_capacity(ns); n_receivers],
            residuals: vec![Vec::with_capacity(ns); n_receivers],
            step_sizes,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.step_sizes.len()
    }

    pub fn n_stages(&self) -> usize {
        4 * self.step_sizes.len()
    }

    /// Stage stamps `t_n + c_s dt_n`.
    pub fn stage_times(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_stages());
        let mut t = self.t0;
        for &dt in &self.step_sizes {
            for c in RK_C {
                out.push(t + c * dt);
            }
            t += dt;
        }
        out
    }

    /// Quadrature weights `H_T = dt_n b_s`.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        self.step_sizes.iter().flat_map(|&dt| RK_B.map(|b| b * dt)).collect()
    }

    pub fn v_star_at(&self, g: usize) -> &[f64] {
        &self.v_star[g * self.n_fault..(g + 1) * self.n_fault]
    }

    pub fn psi_at(&self, g: usize) -> &[f64] {
        &self.psi[g * self.n_fault..(g + 1) * self.n_fault]
    }

    pub fn is_complete(&self) -> bool {
        let ns = self.n_stages();
        self.v_star.len() == ns * self.n_fault
            && self.psi.len() == ns * self.n_fault
            && self.residuals.iter().all(|r| r.len() == ns)
    }

    /// `1/2 sum_k sum_stages H_T r^2`.
    pub fn misfit(&self) -> f64 {
        let w = self.quadrature_weights();
        0.5 * self.residuals.iter().map(|r| r.iter().zip(&w).map(|(r, w)| w * r * r).sum::<f64>()).sum::<f64>()
    }

    pub fn max_slip_velocity(&self) -> f64 {
        self.v_star.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Inputs of one forward run.
pub struct ForwardProblem<'a> {
    pub system: &'a System,
    pub model: &'a FrictionModel,
    pub receivers: Option<&'a ReceiverSet>,
    pub initial: &'a SimState,
    pub t0: f64,
    pub steps: &'a [f64],
    pub v_tol: f64,
    pub locked: bool,
}

pub struct ForwardRun {
    pub final_state: SimState,
    pub history: StageHistory,
}

/// Integrates and records the stage history; `on_stage` sees every stage too.
pub fn run_forward_with(
    p: &ForwardProblem,
    forcing: Option<&dyn BodyForce>,
    mut on_stage: impl FnMut(&StageRecord) -> Result<()>,
) -> Result<ForwardRun> {
    let nrec = p.receivers.map_or(0, |r| r.len());
    let mut history = StageHistory::new(p.t0, p.steps.to_vec(), p.system.n_fault(), nrec);
    if let Some(r) = p.receivers {
        r.check_data(history.n_stages())?;
    }
    let mut rate_state = RateState { model: p.model, tol: p.v_tol };
    let mut locked = Locked;
    let law: &mut dyn FaultLaw = if p.locked { &mut locked } else { &mut rate_state };
    let final_state = p.system.integrate(p.initial.clone(), p.t0, p.steps, law, forcing, |rec| {
        history.v_star.extend_from_slice(rec.v_star);
        history.psi.extend_from_slice(&rec.state.psi);
        if let Some(rs) = p.receivers {
            let w = rs.window_value(rec.time);
            for (k, r) in rs.receivers.iter().enumerate() {
                let bs = &rec.state.blocks[r.block];
                let field = match rs.kind {
                    MisfitKind::Displacement => &bs.u,
                    MisfitKind::Velocity => &bs.v,
                };
                let m = r.sample(field);
                let d = rs.data.as_ref().map_or(0.0, |d| d[k][rec.global]);
                history.measurements[k].push(m);
                history.residuals[k].push(w * (m - d));
            }
        }
        on_stage(rec)
    })?;
    Ok(ForwardRun { final_state, history })
}

pub fn run_forward(p: &ForwardProblem) -> Result<ForwardRun> {
    run_forward_with(p, None, |_| Ok(()))
}

/// `n` equal steps covering `[0, t_end]`, or an error if `t_end / dt` is not close to an integer.
pub fn uniform_steps(t_end: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0 && t_end > 0.0) {
        return Err(Error::InvalidArgument(format!("need positive dt and T, got {dt} and {t_end}")));
    }
    let n = (t_end / dt).round();
    if (n * dt - t_end).abs() > 1e-9 * t_end {
        return Err(Error::InvalidArgument(format!("T = {t_end} s is not a multiple of dt = {dt} s")));
    }
    Ok(vec![t_end / n; n as usize])
}
