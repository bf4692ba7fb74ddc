mod data;
mod gradcheck;
mod invert;
mod output;
mod simulate;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rupture_core::config::RunConfig;
use rupture_core::friction::Param;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "rupture", version, about = "Antiplane dynamic rupture: forward runs, adjoint gradients and inversion")]
struct Cli {
    /// TOML run configuration; built-in reference setup when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Concurrent forward solves for finite-difference sweeps.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Replace the fault roughness seed.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Forward simulation with seismograms, fault histories and snapshots.
    Simulate {
        /// Data manifest; when given, residuals and the misfit are reported.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Synthetic receiver data from the configured (true) model.
    MakeData {
        /// Finer configuration to simulate and resample in time onto this run's stages.
        #[arg(long)]
        source: Option<PathBuf>,
    },
    /// Adjoint gradient against one-sided finite differences.
    GradCheck {
        #[arg(long)]
        param: Option<String>,
        /// Data manifest; inverse-crime data is generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Absolute tolerance of the slip-velocity solve in m/s.
        #[arg(long)]
        v_tol: Option<f64>,
    },
    /// L-BFGS inversion for one friction field.
    Invert {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        param: Option<String>,
        /// Optimizer snapshot to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Checksums and config hashes of every file listed in a manifest.
    VerifyManifest { path: PathBuf },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed_override {
        cfg.fault.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_param(s: &str) -> Result<Param> {
    match Param::parse(s) {
        Some(p) => Ok(p),
        None => bail!("unknown parameter '{s}' (expected a, b, dc, f0, tau0, sigma_n0 or psi0)"),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match &cli.command {
        Command::VerifyManifest { path } => {
            let rep = rupture_core::io::verify_manifest(path)?;
            for p in &rep.problems {
                println!("FAIL {p}");
            }
            println!("{} files checked, {} problems", rep.checked, rep.problems.len());
            Ok(if rep.ok() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Simulate { data } => {
            let cfg = load_config(&cli)?;
            simulate::run(&cfg, &cli.out, data.as_deref())
        }
        Command::MakeData { source } => {
            let cfg = load_config(&cli)?;
            let source = match source {
                Some(p) => {
                    let mut s = RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?;
                    if let Some(seed) = cli.seed_override {
                        s.fault.seed = seed;
                    }
                    Some(s)
                }
                None => None,
            };
            data::make_data(&cfg, source.as_ref(), &cli.out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::GradCheck { param, data, threshold, v_tol } => {
            let mut cfg = load_config(&cli)?;
            if let Some(p) = param {
                cfg.grad_check.param = parse_param(p)?;
            }
            if let Some(t) = threshold {
                cfg.grad_check.threshold = *t;
            }
            if let Some(v) = v_tol {
                cfg.discretization.v_tol = *v;
            }
            gradcheck::run(&cfg, data.as_deref(), jobs, &cli.out)
        }
        Command::Invert { data, param, resume } => {
            let mut cfg = load_config(&cli)?;
            if let Some(p) = param {
                cfg.inversion.param = parse_param(p)?;
            }
            invert::run(&cfg, data, resume.as_deref(), &cli.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp_secs().init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
