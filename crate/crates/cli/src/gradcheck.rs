use crate::output::Output;
use anyhow::Result;
use rupture_core::config::RunConfig;
use rupture_core::pipeline;
use serde_json::json;
use std::path::Path;
use std::process::ExitCode;

pub fn run(cfg: &RunConfig, data: Option<&Path>, jobs: usize, out_dir: &Path) -> Result<ExitCode> {
    let setup = cfg.build()?;
    let data = match data {
        Some(d) => crate::data::load_data(d, cfg, &setup)?,
        None => {
            log::info!("no data given, using inverse-crime data of the configured model");
            pipeline::synthetic_data(&setup)?
        }
    };
    let param = cfg.grad_check.param;
    log::info!("gradient check for {} with {} perturbations on {jobs} worker(s)", param.name(), cfg.grad_check.count);
    let rep = pipeline::grad_check(cfg, &setup, data, jobs)?;
    let mut out = Output::create(out_dir, cfg)?;

    let mut t = out.new_table(&["delta", "error"], 0);
    for p in &rep.curve.points {
        t.push(vec![p.delta, p.error]);
    }
    out.table("error_curve.csv", &t, "error_curve", json!({"param": param, "base_misfit": rep.misfit, "norm": "max over nodes of |g_fd - g_adj| / |p0|"}))?;

    let mut t = out.new_table(&["x_km", "p0", "gradient"], 0);
    for ((x, p), g) in rep.coarse_x.iter().zip(&rep.p0).zip(&rep.curve.gradient) {
        t.push(vec![*x, *p, *g]);
    }
    out.table("gradient_coarse.csv", &t, "gradient", json!({"param": param, "unit": param.unit()}))?;

    let mut t = out.new_table(&["x_km", "gradient", "psi0_gradient"], 0);
    for ((x, g), p) in rep.fine_x.iter().zip(&rep.fine_gradient).zip(&rep.psi0_gradient) {
        t.push(vec![*x, *g, *p]);
    }
    out.table("gradient_fine.csv", &t, "gradient", json!({"param": param, "unit": param.unit()}))?;

    let verdict = json!({
        "param": param,
        "misfit": rep.misfit,
        "min_error": rep.min_error,
        "min_delta": rep.min_delta,
        "threshold": rep.threshold,
        "v_shaped": rep.v_shaped,
        "passed": rep.passed,
    });
    out.json("verdict.json", &verdict, "verdict")?;
    let m = out.finish()?;
    println!("misfit {:.10e}", rep.misfit);
    for p in &rep.curve.points {
        println!("delta {:.3e}  error {:.3e}", p.delta, p.error);
    }
    println!(
        "min error {:.3e} at delta {:.3e} (threshold {:.1e}), v-shaped {}: {}",
        rep.min_error,
        rep.min_delta,
        rep.threshold,
        rep.v_shaped,
        if rep.passed { "PASS" } else { "FAIL" }
    );
    println!("manifest {}", m.display());
    Ok(if rep.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
