use crate::output::Output;
use anyhow::Result;
use rupture_core::config::RunConfig;
use rupture_core::forward::{run_forward_with, ForwardProblem, RateState, SimState, System};
use rupture_core::receivers::MisfitKind;
use rupture_core::Error;
use serde::Serialize;
use serde_json::json;
use std::path::Path;
use std::process::ExitCode;

const NUCLEATION_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Serialize)]
struct Summary {
    status: &'static str,
    error: Option<String>,
    steps_completed: usize,
    steps_planned: usize,
    max_slip_velocity: f64,
    max_slip_velocity_time: f64,
    max_slip_velocity_x: f64,
    nucleation_time: Option<f64>,
    nucleation_x: Option<f64>,
    misfit: Option<f64>,
    n_receivers: usize,
}

struct Profile {
    time: f64,
    slip: Vec<f64>,
    v_star: Vec<f64>,
}

fn argmax_abs(v: &[f64]) -> (usize, f64) {
    v.iter().enumerate().fold((0, 0.0), |a, (i, x)| if x.abs() > a.1 { (i, x.abs()) } else { a })
}

fn wants(times: &[f64], t: f64, dt: f64) -> Option<f64> {
    times.iter().copied().find(|&s| (s - t).abs() < 0.5 * dt)
}

pub fn run(cfg: &RunConfig, out_dir: &Path, data: Option<&Path>) -> Result<ExitCode> {
    let setup = cfg.build()?;
    let mut receivers = setup.receivers.clone();
    if let Some(d) = data {
        receivers.data = Some(crate::data::load_data(d, cfg, &setup)?);
    }
    let sys = &setup.system;
    let x = sys.fault_x().to_vec();
    let nrec = receivers.len();
    let o = &cfg.output;
    let mut seis: Vec<Vec<(usize, usize, f64, f64)>> = vec![Vec::new(); nrec];
    let mut vstar_rows: Vec<(usize, f64, Vec<f64>)> = Vec::new();
    let mut profiles: Vec<Profile> = Vec::new();
    let mut snapshots: Vec<(f64, SimState)> = Vec::new();
    let mut max_v = (0.0, 0.0, 0.0);
    let mut nucleation: Option<(f64, f64)> = None;
    let mut steps_done = 0;
    let p = ForwardProblem {
        system: sys,
        model: &setup.model,
        receivers: Some(&receivers),
        initial: &setup.initial,
        t0: 0.0,
        steps: &setup.steps,
        v_tol: setup.v_tol,
        locked: setup.locked,
    };
    log::info!("simulating {} steps on {} fault nodes, {} receivers", setup.steps.len(), x.len(), nrec);
    let result = run_forward_with(&p, None, |r| {
        for (k, rc) in receivers.receivers.iter().enumerate() {
            let b = &r.state.blocks[rc.block];
            let v = rc.sample(if receivers.kind == MisfitKind::Displacement { &b.u } else { &b.v });
            seis[k].push((r.step, r.stage, r.time, v));
        }
        let (i, v) = argmax_abs(r.v_star);
        if v > max_v.0 {
            max_v = (v, r.time, x[i]);
        }
        if nucleation.is_none() && v > NUCLEATION_THRESHOLD {
            nucleation = Some((r.time, x[i]));
        }
        if r.stage == 0 {
            steps_done = r.step;
            if r.step % o.vstar_every.max(1) == 0 {
                vstar_rows.push((r.step, r.time, r.v_star.to_vec()));
            }
            if let Some(t) = wants(&o.slip_times, r.time, r.dt) {
                profiles.push(Profile { time: t, slip: r.state.slip(), v_star: r.v_star.to_vec() });
            }
            if let Some(t) = wants(&o.snapshot_times, r.time, r.dt) {
                snapshots.push((t, r.state.clone()));
            }
        }
        Ok(())
    });
    let t_end: f64 = setup.steps.iter().sum();
    let (status, error, misfit, history) = match result {
        Ok(run) => {
            steps_done = setup.steps.len();
            let dt = *setup.steps.last().unwrap_or(&0.0);
            let v_end = final_v_star(sys, &setup.model, &run.final_state, setup.v_tol, setup.locked)?;
            if let Some(t) = wants(&o.slip_times, t_end, dt) {
                profiles.push(Profile { time: t, slip: run.final_state.slip(), v_star: v_end });
            }
            if let Some(t) = wants(&o.snapshot_times, t_end, dt) {
                snapshots.push((t, run.final_state.clone()));
            }
            let misfit = receivers.data.is_some().then(|| run.history.misfit());
            ("ok", None, misfit, Some(run.history))
        }
        Err(e @ Error::Unstable { .. }) => ("unstable", Some(e.to_string()), None, None),
        Err(e) => return Err(e.into()),
    };
    let mut out = Output::create(out_dir, cfg)?;
    write_seismograms(&mut out, &receivers, &seis, status)?;
    write_fault(&mut out, &x, &vstar_rows, &profiles)?;
    write_snapshots(&mut out, sys, &snapshots)?;
    if let Some(h) = &history {
        out.checkpoint("history.bin", h)?;
    }
    let summary = Summary {
        status,
        error: error.clone(),
        steps_completed: steps_done,
        steps_planned: setup.steps.len(),
        max_slip_velocity: max_v.0,
        max_slip_velocity_time: max_v.1,
        max_slip_velocity_x: max_v.2,
        nucleation_time: nucleation.map(|n| n.0),
        nucleation_x: nucleation.map(|n| n.1),
        misfit,
        n_receivers: nrec,
    };
    out.json("summary.json", &summary, "summary")?;
    let m = out.finish()?;
    println!("max |V*| = {:.4e} m/s at t = {:.3} s, x = {:.2} km", max_v.0, max_v.1, max_v.2);
    if let Some((t, xn)) = nucleation {
        println!("|V*| first exceeds {NUCLEATION_THRESHOLD:e} m/s at t = {t:.3} s, x = {xn:.2} km");
    }
    if let Some(f) = misfit {
        println!("misfit {f:.10e}");
    }
    println!("manifest {}", m.display());
    if let Some(e) = error {
        eprintln!("error: {e} (partial outputs written)");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn final_v_star(sys: &System, model: &rupture_core::friction::FrictionModel, state: &SimState, tol: f64, locked: bool) -> Result<Vec<f64>> {
    if locked {
        return Ok(vec![0.0; sys.n_fault()]);
    }
    let mut w = sys.workspace();
    let mut rate = state.clone();
    sys.rhs(0.0, 0, state, &mut RateState { model, tol }, None, &mut rate, &mut w)?;
    Ok(w.v_star.clone())
}

fn write_seismograms(out: &mut Output, rs: &rupture_core::receivers::ReceiverSet, seis: &[Vec<(usize, usize, f64, f64)>], status: &str) -> Result<()> {
    for (k, series) in seis.iter().enumerate() {
        let mut t = out.new_table(&["step", "stage", "time_s", "value"], 2);
        for &(step, stage, time, v) in series {
            t.push(vec![step as f64, stage as f64, time, v]);
        }
        let r = &rs.receivers[k];
        let meta = json!({"receiver": k, "x": r.x, "y": r.y, "block": r.block, "kind": rs.kind, "value_unit": rs.kind.unit(), "status": status});
        out.table(&format!("seismograms/receiver_{k:03}.csv"), &t, "seismogram", meta)?;
    }
    Ok(())
}

fn write_fault(out: &mut Output, x: &[f64], vstar: &[(usize, f64, Vec<f64>)], profiles: &[Profile]) -> Result<()> {
    let mut t = out.new_table(&["step", "time_s", "x_km", "v_star"], 1);
    for (step, time, v) in vstar {
        for (xi, vi) in x.iter().zip(v) {
            t.push(vec![*step as f64, *time, *xi, *vi]);
        }
    }
    out.table("fault/v_star.csv", &t, "fault_space_time", json!({"columns": "slip velocity V* in m/s at step starts"}))?;
    let mut t = out.new_table(&["time_s", "x_km", "slip_m", "v_star"], 0);
    for p in profiles {
        for ((xi, s), v) in x.iter().zip(&p.slip).zip(&p.v_star) {
            t.push(vec![p.time, *xi, *s, *v]);
        }
    }
    out.table("fault/slip.csv", &t, "slip_profiles", json!({"times": profiles.iter().map(|p| p.time).collect::<Vec<_>>()}))?;
    let gp = format!(
        "{}{}\nset datafile separator ','\nset xlabel 'x (km)'\nset ylabel 't (s)'\nset view map\nsplot 'v_star.csv' using 3:2:(log10(abs($4)+1e-20)) with points palette pt 5 ps 0.4 notitle\n",
        rupture_core::io::HASH_PREFIX,
        out.hash
    );
    out.text("fault/v_star.gp", &gp, "script")?;
    Ok(())
}

fn write_snapshots(out: &mut Output, sys: &System, snaps: &[(f64, SimState)]) -> Result<()> {
    for (time, state) in snaps {
        let mut t = out.new_table(&["block", "i", "j", "x_km", "y_km", "u_m", "v_m_s"], 3);
        for (b, g) in sys.grid.blocks.iter().enumerate() {
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let k = g.idx(i, j);
                    let s = &state.blocks[b];
                    t.push(vec![b as f64, i as f64, j as f64, g.x[k], g.y[k], s.u[k], s.v[k]]);
                }
            }
        }
        let name = format!("snapshots/field_t{time:08.3}.csv");
        out.table(&name, &t, "snapshot", json!({"time": time}))?;
        let gp = format!(
            "{}{}\nset datafile separator ','\nset view map\nset xlabel 'x (km)'\nset ylabel 'y (km)'\nsplot '{}' using 4:5:7 with points palette pt 5 ps 0.4 notitle\n",
            rupture_core::io::HASH_PREFIX,
            out.hash,
            name.trim_start_matches("snapshots/")
        );
        out.text(&format!("snapshots/field_t{time:08.3}.gp"), &gp, "script")?;
    }
    Ok(())
}
