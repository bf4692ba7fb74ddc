use crate::output::Output;
use anyhow::{bail, Context, Result};
use rupture_core::config::RunConfig;
use rupture_core::inversion::InversionTrace;
use rupture_core::io::{read_json, write_json, Table};
use rupture_core::lbfgs::{LbfgsState, Termination};
use rupture_core::pipeline;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::Path;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

pub const SNAPSHOT_FILE: &str = "lbfgs_state.json";

/// Optimizer snapshot written after every iteration and on interrupt.
#[derive(Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub config_hash: String,
    pub state: LbfgsState,
    pub trace: InversionTrace,
}

pub fn run(cfg: &RunConfig, data: &Path, resume: Option<&Path>, out_dir: &Path) -> Result<ExitCode> {
    let setup = cfg.build()?;
    if setup.locked {
        bail!("inversion needs an active friction law (discretization.locked = true)");
    }
    let receivers = pipeline::with_data(&setup.receivers, crate::data::load_data(data, cfg, &setup)?);
    let interp = cfg.interpolation()?;
    let problem = pipeline::inversion_problem(cfg, &setup, &receivers, &interp);
    problem.validate()?;
    let hash = cfg.hash();
    let resume_from = match resume {
        Some(p) => {
            let s: Snapshot = read_json(p).with_context(|| format!("reading {}", p.display()))?;
            if s.config_hash != hash {
                bail!("snapshot was written by config {}, this run is {}", s.config_hash, hash);
            }
            log::info!("resuming at iteration {} (misfit {:.6e})", s.state.iteration, s.state.f);
            Some((s.state, s.trace))
        }
        None => None,
    };

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst)).context("installing interrupt handler")?;
    }
    std::fs::create_dir_all(out_dir)?;
    let snap_path = out_dir.join(SNAPSHOT_FILE);
    let nrec = receivers.len();
    let mut trace = resume_from.as_ref().map(|r| r.1.clone()).unwrap_or(InversionTrace { n_receivers: nrec, records: vec![] });
    let every = cfg.inversion.snapshot_every.max(1);
    let mut snap_err: Option<anyhow::Error> = None;
    let result = problem.solve(resume_from, |rec, state| {
        trace.records.push(rec.clone());
        let snap = Snapshot { config_hash: hash.clone(), state: state.clone(), trace: trace.clone() };
        if let Err(e) = write_json(&snap_path, &snap) {
            snap_err = Some(e.into());
            return false;
        }
        if rec.iteration % every == 0 {
            if let Err(e) = write_iterate(out_dir, &hash, rec.iteration, &interp.coarse_nodes(), &rec.x) {
                snap_err = Some(e);
                return false;
            }
        }
        !stop.load(Ordering::SeqCst)
    })?;
    if let Some(e) = snap_err {
        return Err(e);
    }

    let mut out = Output::create(out_dir, cfg)?;
    let mut t = out.new_table(&["iteration", "misfit", "gradient_norm", "step", "evaluations"], 1);
    for r in &result.trace.records {
        t.push(vec![r.iteration as f64, r.misfit, r.gradient_norm, r.step, r.evaluations as f64]);
    }
    let param = cfg.inversion.param;
    out.table("trace.csv", &t, "trace", json!({"param": param}))?;
    let coarse_x = interp.coarse_nodes();
    let mut t = out.new_table(&["x_km", "value"], 0);
    for (x, v) in coarse_x.iter().zip(&result.coarse) {
        t.push(vec![*x, *v]);
    }
    out.table("estimate_coarse.csv", &t, "estimate", json!({"param": param, "unit": param.unit()}))?;
    let fine = result.model.field(param);
    let truth = setup.model.field(param);
    let mut t = out.new_table(&["x_km", "value", "true_value"], 0);
    for (i, x) in setup.system.fault_x().iter().enumerate() {
        t.push(vec![*x, fine[i], truth[i]]);
    }
    out.table("estimate_fine.csv", &t, "estimate", json!({"param": param, "unit": param.unit()}))?;
    for e in std::fs::read_dir(out_dir.join("iterates")).into_iter().flatten().flatten() {
        let name = e.file_name().to_string_lossy().into_owned();
        if name.ends_with(".csv") {
            out.register(&format!("iterates/{name}"), "iterate")?;
        }
    }
    out.register(SNAPSHOT_FILE, "optimizer_state")?;
    let status = match &result.outcome.termination {
        Termination::GradientTolerance => "gradient_tolerance".to_string(),
        Termination::MaxIterations => "max_iterations".to_string(),
        Termination::Stopped => "interrupted".to_string(),
        Termination::LineSearchFailed(m) => format!("line_search_failed: {m}"),
    };
    let misfits = result.trace.misfits();
    out.json(
        "summary.json",
        &json!({
            "param": param,
            "termination": status,
            "iterations": result.outcome.state.iteration,
            "evaluations": result.outcome.state.evaluations,
            "initial_misfit": misfits.first(),
            "final_misfit": result.outcome.state.f,
            "gradient_norm": result.trace.records.last().map(|r| r.gradient_norm),
        }),
        "summary",
    )?;
    let m = out.finish()?;
    println!(
        "{status} after {} iterations: misfit {:.6e}",
        result.outcome.state.iteration, result.outcome.state.f
    );
    println!("manifest {}", m.display());
    if result.outcome.termination == Termination::Stopped {
        println!("resume with --resume {}", snap_path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn write_iterate(out_dir: &Path, hash: &str, iteration: usize, x: &[f64], values: &[f64]) -> Result<()> {
    let mut t = Table::new(hash, &["x_km", "value"], 0);
    for (a, b) in x.iter().zip(values) {
        t.push(vec![*a, *b]);
    }
    let p = out_dir.join("iterates").join(format!("iterate_{iteration:04}.csv"));
    std::fs::create_dir_all(p.parent().unwrap())?;
    t.write(&p)?;
    Ok(())
}
