//! Time-reversed adjoint system and exact gradients of the discrete misfit.
//!
//! The adjoint variables are the Lagrange multipliers of the RK4-discretized
//! forward system, scaled by the quadratures: `H u_dag`, `rho H v_dag`,
//! `M ustar_dag` and `-H_Gamma psi_dag`. With that scaling the adjoint
//! right-hand side has the same SBP-SAT structure as the forward one and the
//! fault condition becomes linearized rate-and-state friction with
//! coefficients taken from the forward stages.

use crate::error::{Error, Result};
use crate::forward::{RhsWork, SimState, StageHistory, System, FAULT_SIDE, MINUS, PLUS, RK_A, RK_B, RK_C};
use crate::friction::{solve_v_star_adjoint, FrictionModel, Param, StatePartials};
use crate::receivers::{MisfitKind, ReceiverSet};
use crate::sbp::{InterpolationPair, SIDES};
use serde::{Deserialize, Serialize};

/// Per-stage source amplitudes acting on the adjoint velocity, `[receiver][adjoint stage]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSource {
    pub amplitudes: Vec<Vec<f64>>,
}

/// Adjoint sources from the recorded residuals.
///
/// Velocity misfits inject `w r` directly. Displacement misfits inject
/// `-r_hat = int_t^T w r`, accumulated with the same RK4 stage recurrence as
/// the adjoint integration so that the result stays exact.
pub fn adjoint_source(history: &StageHistory, receivers: &ReceiverSet) -> Result<AdjointSource> {
    let ns = history.n_stages();
    if history.residuals.len() != receivers.len() {
        return Err(Error::HistoryMismatch(format!(
            "{} residual series for {} receivers",
            history.residuals.len(),
            receivers.len()
        )));
    }
    let times = history.stage_times();
    let n = history.n_steps();
    let mut amplitudes = Vec::with_capacity(receivers.len());
    for res in &history.residuals {
        if res.len() != ns {
            return Err(Error::HistoryMismatch(format!("residual series has {} stages, expected {ns}", res.len())));
        }
        let s: Vec<f64> = (0..ns)
            .map(|i| {
                let g = ns - 1 - i;
                receivers.window_value(times[g]) * res[g]
            })
            .collect();
        let amp = match receivers.kind {
            MisfitKind::Velocity => s,
            MisfitKind::Displacement => {
                let mut out = vec![0.0; ns];
                let mut r = 0.0;
                for nd in 0..n {
                    let dt = history.step_sizes[n - 1 - nd];
                    let base = 4 * nd;
                    for st in 0..4 {
                        out[base + st] = if st == 0 { r } else { r + RK_A[st] * dt * s[base + st - 1] };
                    }
                    r += dt * (0..4).map(|st| RK_B[st] * s[base + st]).sum::<f64>();
                }
                out
            }
        };
        amplitudes.push(amp);
    }
    Ok(AdjointSource { amplitudes })
}

/// Linearized fault coefficients at one forward stage.
#[derive(Debug, Clone)]
pub enum FaultCoefficients<'a> {
    Friction { partials: &'a [StatePartials] },
    Locked,
}

/// Scratch for the adjoint right-hand side.
#[derive(Debug, Clone)]
pub struct AdjointWork {
    inner: RhsWork,
    acc: [Vec<f64>; 2],
    lift_v: [Vec<f64>; 2],
    edge: [Vec<f64>; 3],
    fault_eb: [Vec<f64>; 2],
    fault_tp: [Vec<f64>; 2],
    /// Adjoint slip velocity from the latest evaluation.
    pub v_dag: Vec<f64>,
}

impl System {
    pub fn adjoint_workspace(&self) -> AdjointWork {
        let m = self.n_fault();
        let ne = self.ops.iter().flat_map(|o| o.edges.iter().map(|e| e.len())).max().unwrap_or(0);
        AdjointWork {
            inner: self.workspace(),
            acc: [vec![0.0; self.ops[0].len()], vec![0.0; self.ops[1].len()]],
            lift_v: [vec![0.0; self.ops[0].len()], vec![0.0; self.ops[1].len()]],
            edge: std::array::from_fn(|_| vec![0.0; ne]),
            fault_eb: [vec![0.0; m], vec![0.0; m]],
            fault_tp: [vec![0.0; m], vec![0.0; m]],
            v_dag: vec![0.0; m],
        }
    }

    /// Reversed-time adjoint rate `out = A_dag(state)` with an optional receiver source.
    pub fn adjoint_rhs(
        &self,
        state: &SimState,
        coef: &FaultCoefficients,
        source: Option<(&ReceiverSet, &[f64])>,
        out: &mut SimState,
        work: &mut AdjointWork,
    ) -> Result<()> {
        for b in 0..2 {
            let op = &self.ops[b];
            let st = &state.blocks[b];
            let z = self.impedance(b);
            let bw = &mut work.inner.blocks[b];
            op.fluxes(&st.v, bw);
            op.neg_stiffness(&st.v, bw, &mut work.acc[b]);
            work.lift_v[b].iter_mut().for_each(|x| *x = 0.0);
            for side in SIDES {
                let e = op.edge(side);
                let n = e.len();
                let [tp, eb, buf] = &mut work.edge;
                op.traction(side, bw, &mut tp[..n]);
                op.restrict(side, &st.v, &mut eb[..n]);
                if side == FAULT_SIDE[b] {
                    work.fault_eb[b].copy_from_slice(&eb[..n]);
                    work.fault_tp[b].copy_from_slice(&tp[..n]);
                    continue;
                }
                let r = self.reflection[b][side.index()];
                let (ca, cb) = (0.5 * (r - 1.0), 0.5 * (r + 1.0) / z);
                let us = &st.ustar[side.index()];
                for q in 0..n {
                    eb[q] = ca * eb[q] + cb * us[q];
                }
                self.adjoint_side_terms(b, side.index(), &tp[..n], &eb[..n], &mut buf[..n], out, work_split(&mut work.acc, &mut work.lift_v, b));
            }
        }
        let (zm, zp) = (self.impedance(MINUS), self.impedance(PLUS));
        let m = self.n_fault();
        let mm = &self.ops[MINUS].edge(FAULT_SIDE[MINUS]).m;
        let mp = &self.ops[PLUS].edge(FAULT_SIDE[PLUS]).m;
        let usm = &state.blocks[MINUS].ustar[FAULT_SIDE[MINUS].index()];
        let usp = &state.blocks[PLUS].ustar[FAULT_SIDE[PLUS].index()];
        let mut qm = vec![0.0; m];
        let mut qp = vec![0.0; m];
        for i in 0..m {
            let hg = self.h_fault[i];
            let c_f = (mm[i] * work.fault_eb[MINUS][i] - mp[i] * work.fault_eb[PLUS][i] + mm[i] * usm[i] / zm
                - mp[i] * usp[i] / zp)
                / hg;
            let psi_dag = state.psi[i];
            let beta = match coef {
                FaultCoefficients::Friction { partials } => {
                    let p = &partials[i];
                    let vd = solve_v_star_adjoint(self.kappa[i], self.kappa[i] * c_f, p.f_v, p.g_v, psi_dag, i)?;
                    work.v_dag[i] = vd;
                    out.psi[i] = vd * p.f_psi + psi_dag * p.g_psi;
                    vd + c_f
                }
                FaultCoefficients::Locked => {
                    work.v_dag[i] = 0.0;
                    out.psi[i] = 0.0;
                    c_f
                }
            };
            qm[i] = (mm[i] * usm[i] / zm - hg * beta * zp / (zp + zm)) / mm[i];
            qp[i] = (mp[i] * usp[i] / zp + hg * beta * zm / (zp + zm)) / mp[i];
        }
        for (b, q) in [(MINUS, &qm), (PLUS, &qp)] {
            let side = FAULT_SIDE[b];
            let buf = &mut work.edge[2];
            self.adjoint_side_terms(b, side.index(), &work.fault_tp[b], q, &mut buf[..m], out, work_split(&mut work.acc, &mut work.lift_v, b));
        }
        for b in 0..2 {
            let op = &self.ops[b];
            let rho = self.material[b].rho;
            let st = &state.blocks[b];
            let o = &mut out.blocks[b];
            for k in 0..op.len() {
                o.u[k] = work.acc[b][k] / op.hvol[k];
                o.v[k] = st.u[k] / rho + work.lift_v[b][k] / (rho * op.hvol[k]);
            }
        }
        if let Some((rs, amp)) = source {
            for (r, a) in rs.receivers.iter().zip(amp) {
                let rho = self.material[r.block].rho;
                let v = &mut out.blocks[r.block].v;
                for (&k, d) in r.nodes.iter().zip(&r.delta) {
                    v[k] += a * d / rho;
                }
            }
        }
        Ok(())
    }

    /// Side contributions given the traction `tp = T v_dag` and the characteristic weight `q`.
    #[allow(clippy::too_many_arguments)]
    fn adjoint_side_terms(
        &self,
        b: usize,
        side: usize,
        tp: &[f64],
        q: &[f64],
        buf: &mut [f64],
        out: &mut SimState,
        (acc, lift_v): (&mut [f64], &mut [f64]),
    ) {
        let op = &self.ops[b];
        let e = &op.edges[side];
        let s = e.side;
        let z = self.impedance(b);
        let rate = &mut out.blocks[b].ustar[side];
        for k in 0..e.len() {
            rate[k] = -tp[k] - e.gamma[k] * q[k];
            buf[k] = e.m[k] * (tp[k] + e.gamma[k] * q[k]);
        }
        op.add_lift(s, buf, acc);
        for k in 0..e.len() {
            buf[k] = -e.m[k] * q[k];
        }
        op.add_traction_transpose(s, buf, acc);
        for k in 0..e.len() {
            buf[k] = e.m[k] * z * q[k];
        }
        op.add_lift(s, buf, lift_v);
    }

    /// Pairing `(u, v, ustar, psi)` of forward perturbations with adjoint variables.
    pub fn adjoint_pairing(&self, adj: &SimState, fwd: &SimState) -> f64 {
        let mut s = 0.0;
        for b in 0..2 {
            let op = &self.ops[b];
            let rho = self.material[b].rho;
            let (a, f) = (&adj.blocks[b], &fwd.blocks[b]);
            for k in 0..op.len() {
                s += op.hvol[k] * (a.u[k] * f.u[k] + rho * a.v[k] * f.v[k]);
            }
            for side in SIDES {
                let e = op.edge(side);
                s += (0..e.len()).map(|q| e.m[q] * a.ustar[side.index()][q] * f.ustar[side.index()][q]).sum::<f64>();
            }
        }
        s - (0..self.n_fault()).map(|i| self.h_fault[i] * adj.psi[i] * fwd.psi[i]).sum::<f64>()
    }
}

fn work_split<'a>(acc: &'a mut [Vec<f64>; 2], lift: &'a mut [Vec<f64>; 2], b: usize) -> (&'a mut [f64], &'a mut [f64]) {
    (&mut acc[b], &mut lift[b])
}

/// Adjoint fault histories in forward stage order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointHistory {
    pub n_fault: usize,
    pub v_dag: Vec<f64>,
    pub psi_dag: Vec<f64>,
    /// `psi_dag` at `t = 0`.
    pub psi_dag_initial: Vec<f64>,
}

impl AdjointHistory {
    pub fn v_dag_at(&self, g: usize) -> &[f64] {
        &self.v_dag[g * self.n_fault..(g + 1) * self.n_fault]
    }

    pub fn psi_dag_at(&self, g: usize) -> &[f64] {
        &self.psi_dag[g * self.n_fault..(g + 1) * self.n_fault]
    }
}

/// Integrates the adjoint over the reversed forward steps. Adjoint stage `i`
/// uses the coefficients of forward stage `4N - 1 - i`.
pub fn adjoint_integrate(
    system: &System,
    model: &FrictionModel,
    history: &StageHistory,
    receivers: &ReceiverSet,
    locked: bool,
) -> Result<AdjointHistory> {
    let m = system.n_fault();
    if !history.is_complete() || history.n_fault != m {
        return Err(Error::HistoryMismatch("forward history is incomplete or sized for another grid".into()));
    }
    let src = adjoint_source(history, receivers)?;
    let ns = history.n_stages();
    let n = history.n_steps();
    let mut v_dag = vec![0.0; ns * m];
    let mut psi_dag = vec![0.0; ns * m];
    let mut work = system.adjoint_workspace();
    let mut y = system.zero_state();
    let mut ys = y.clone();
    let mut k = y.clone();
    let mut acc = y.clone();
    let mut partials = vec![StatePartials { f_v: 0.0, f_psi: 0.0, g_v: 0.0, g_psi: 0.0 }; m];
    let mut amp = vec![0.0; receivers.len()];
    for nd in 0..n {
        let dt = history.step_sizes[n - 1 - nd];
        for s in 0..4 {
            let i = 4 * nd + s;
            let g = ns - 1 - i;
            if s > 0 {
                ys.assign_axpy(&y, RK_A[s] * dt, &k);
            }
            let yst = if s == 0 { &y } else { &ys };
            let coef = if locked {
                FaultCoefficients::Locked
            } else {
                let (vs, ps) = (history.v_star_at(g), history.psi_at(g));
                for q in 0..m {
                    partials[q] = model.partials(vs[q], ps[q], q);
                }
                FaultCoefficients::Friction { partials: &partials }
            };
            for (a, series) in amp.iter_mut().zip(&src.amplitudes) {
                *a = series[i];
            }
            system.adjoint_rhs(yst, &coef, Some((receivers, &amp)), &mut k, &mut work)?;
            v_dag[g * m..(g + 1) * m].copy_from_slice(&work.v_dag);
            psi_dag[g * m..(g + 1) * m].copy_from_slice(&yst.psi);
            if s == 0 {
                acc.clone_from(&k);
                acc.scale(RK_B[0]);
            } else {
                acc.axpy(RK_B[s], &k);
            }
        }
        y.axpy(dt, &acc);
    }
    debug_assert_eq!(RK_C[0], 0.0);
    Ok(AdjointHistory { n_fault: m, v_dag, psi_dag, psi_dag_initial: y.psi })
}

/// Fine-grid gradient `-sum H_T H_Gamma (F_p V_dag + G_p psi_dag)`, or
/// `-H_Gamma psi_dag(0)` for the initial state.
pub fn assemble_gradient(
    system: &System,
    model: &FrictionModel,
    fwd: &StageHistory,
    adj: &AdjointHistory,
    param: Param,
) -> Result<Vec<f64>> {
    let m = system.n_fault();
    if adj.v_dag.len() != fwd.v_star.len() || adj.n_fault != m {
        return Err(Error::HistoryMismatch("forward and adjoint histories are misaligned".into()));
    }
    if param == Param::Psi0 {
        return Ok((0..m).map(|i| -system.h_fault[i] * adj.psi_dag_initial[i]).collect());
    }
    let w = fwd.quadrature_weights();
    let mut grad = vec![0.0; m];
    for (g, wt) in w.iter().enumerate() {
        let (vs, ps) = (fwd.v_star_at(g), fwd.psi_at(g));
        let (vd, pd) = (adj.v_dag_at(g), adj.psi_dag_at(g));
        for i in 0..m {
            let (fp, gp) = model.param_partials(vs[i], ps[i], i, param);
            grad[i] -= wt * (fp * vd[i] + gp * pd[i]);
        }
    }
    for (gi, h) in grad.iter_mut().zip(&system.h_fault) {
        *gi *= h;
    }
    Ok(grad)
}

/// Gradients of one misfit evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub param: Param,
    pub misfit: f64,
    pub fine_x: Vec<f64>,
    pub fine_gradient: Vec<f64>,
    pub coarse_x: Vec<f64>,
    pub coarse_gradient: Vec<f64>,
    pub psi0_gradient: Vec<f64>,
    pub config_hash: String,
}

impl GradientReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        system: &System,
        model: &FrictionModel,
        fwd: &StageHistory,
        adj: &AdjointHistory,
        param: Param,
        interp: &InterpolationPair,
        config_hash: &str,
    ) -> Result<GradientReport> {
        let fine_gradient = assemble_gradient(system, model, fwd, adj, param)?;
        let coarse_gradient = interp.pull_back(&fine_gradient);
        let psi0_gradient = assemble_gradient(system, model, fwd, adj, Param::Psi0)?;
        Ok(GradientReport {
            param,
            misfit: fwd.misfit(),
            fine_x: system.fault_x().to_vec(),
            fine_gradient,
            coarse_x: interp.coarse_nodes(),
            coarse_gradient,
            psi0_gradient,
            config_hash: config_hash.to_string(),
        })
    }
}
