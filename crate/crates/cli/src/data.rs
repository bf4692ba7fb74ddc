use crate::output::Output;
use anyhow::{bail, ensure, Context, Result};
use rupture_core::config::{RunConfig, Setup};
use rupture_core::forward::{run_forward_with, ForwardProblem, StageHistory};
use rupture_core::io::{Manifest, Table};
use rupture_core::pipeline;
use rupture_core::receivers::{resample_cubic, MisfitKind, ReceiverSet};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::Path;

/// Shape of a data set, checked against the run that consumes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSignature {
    pub mode: String,
    pub kind: MisfitKind,
    pub n_stages: usize,
    pub t_end: f64,
    pub positions: Vec<[f64; 2]>,
    #[serde(default)]
    pub source_config_hash: Option<String>,
}

fn signature(setup: &Setup, cfg: &RunConfig, mode: &str, source: Option<String>) -> DataSignature {
    DataSignature {
        mode: mode.into(),
        kind: setup.receivers.kind,
        n_stages: 4 * setup.steps.len(),
        t_end: cfg.discretization.t_end,
        positions: setup.receivers.receivers.iter().map(|r| [r.x, r.y]).collect(),
        source_config_hash: source,
    }
}

pub fn make_data(cfg: &RunConfig, source: Option<&RunConfig>, out_dir: &Path) -> Result<()> {
    let setup = cfg.build()?;
    let (data, sig) = match source {
        None => {
            log::info!("inverse-crime data: {} receivers, {} steps", setup.receivers.len(), setup.steps.len());
            (pipeline::synthetic_data(&setup)?, signature(&setup, cfg, "inverse_crime", None))
        }
        Some(src) => (high_res_data(cfg, &setup, src)?, signature(&setup, cfg, "resampled", Some(src.hash()))),
    };
    let mut out = Output::create(out_dir, cfg)?;
    let times = StageHistory::new(0.0, setup.steps.clone(), 0, 0).stage_times();
    for (k, series) in data.iter().enumerate() {
        let mut t = out.new_table(&["step", "stage", "time_s", "value"], 2);
        for (g, v) in series.iter().enumerate() {
            t.push(vec![(g / 4) as f64, (g % 4) as f64, times[g], *v]);
        }
        let r = &setup.receivers.receivers[k];
        let meta = json!({"receiver": k, "x": r.x, "y": r.y, "block": r.block, "kind": setup.receivers.kind.unit()});
        out.table(&format!("data/receiver_{k:03}.csv"), &t, "data", meta)?;
    }
    out.set_meta(serde_json::to_value(&sig)?);
    let m = out.finish()?;
    println!("wrote {} receiver series, manifest {}", data.len(), m.display());
    Ok(())
}

/// Runs the finer `src` configuration and resamples its step-start samples
/// cubically onto the stage stamps of the target run.
fn high_res_data(cfg: &RunConfig, target: &Setup, src: &RunConfig) -> Result<Vec<Vec<f64>>> {
    ensure!(
        (src.discretization.t_end - cfg.discretization.t_end).abs() < 1e-12,
        "source runs to t = {} s, target to {} s",
        src.discretization.t_end,
        cfg.discretization.t_end
    );
    let s = src.build().context("building source configuration")?;
    let mut rs = ReceiverSet::new(&s.system.grid, &s.system.ops, &cfg.receiver_positions(), target.receivers.kind, None)?;
    rs.window = None;
    log::info!("source run: m = {}, {} steps", s.system.n_fault(), s.steps.len());
    let p = ForwardProblem {
        system: &s.system,
        model: &s.model,
        receivers: Some(&rs),
        initial: &s.initial,
        t0: 0.0,
        steps: &s.steps,
        v_tol: s.v_tol,
        locked: s.locked,
    };
    let run = run_forward_with(&p, None, |_| Ok(()))?;
    let h = &run.history;
    let mut times: Vec<f64> = h.stage_times().iter().step_by(4).copied().collect();
    times.push(h.t0 + h.step_sizes.iter().sum::<f64>());
    let targets = StageHistory::new(0.0, target.steps.clone(), 0, 0).stage_times();
    let mut data = Vec::with_capacity(rs.len());
    for (k, r) in rs.receivers.iter().enumerate() {
        let mut vals: Vec<f64> = h.measurements[k].iter().step_by(4).copied().collect();
        let b = &run.final_state.blocks[r.block];
        vals.push(r.sample(if rs.kind == MisfitKind::Displacement { &b.u } else { &b.v }));
        data.push(resample_cubic(&times, &vals, &targets)?);
    }
    Ok(data)
}

/// Receiver series of a data manifest, validated against `setup`.
pub fn load_data(manifest: &Path, cfg: &RunConfig, setup: &Setup) -> Result<Vec<Vec<f64>>> {
    let m = Manifest::read(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let rep = rupture_core::io::verify_manifest(manifest)?;
    if !rep.ok() {
        bail!("data manifest failed verification: {}", rep.problems.join("; "));
    }
    let sig: DataSignature = serde_json::from_value(m.meta.clone()).context("data manifest carries no data signature")?;
    let want = signature(setup, cfg, &sig.mode, sig.source_config_hash.clone());
    ensure!(sig.kind == want.kind, "data are {:?} series, the run records {:?}", sig.kind, want.kind);
    ensure!(sig.n_stages == want.n_stages, "data have {} stages, the run has {}", sig.n_stages, want.n_stages);
    ensure!(sig.positions.len() == want.positions.len(), "data have {} receivers, the run has {}", sig.positions.len(), want.positions.len());
    for (a, b) in sig.positions.iter().zip(&want.positions) {
        ensure!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12, "receiver at {a:?} in the data, {b:?} in the run");
    }
    if m.config_hash != cfg.hash() {
        log::info!("data were generated with config {}, running {}", m.config_hash, cfg.hash());
    }
    let dir = if manifest.is_dir() { manifest.to_path_buf() } else { manifest.parent().map(Path::to_path_buf).unwrap_or_default() };
    let mut entries: Vec<_> = m.entries_of_kind("data").collect();
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let mut data = Vec::with_capacity(entries.len());
    for e in entries {
        let t = Table::read(&dir.join(&e.path))?;
        let v = t.column("value").with_context(|| format!("{}: no value column", e.path))?;
        data.push(v);
    }
    ensure!(data.len() == want.positions.len(), "manifest lists {} data files for {} receivers", data.len(), want.positions.len());
    Ok(data)
}
