//! End-to-end workflows shared by the command line and the test suites.

use crate::config::{RunConfig, Setup};
use crate::error::{Error, Result};
use crate::forward::{run_forward, ForwardProblem, ForwardRun};
use crate::friction::Param;
use crate::gradcheck::{fd_gradient_check, log_deltas, ErrorCurve};
use crate::inversion::{InversionProblem, MisfitObjective};
use crate::receivers::ReceiverSet;
use crate::sbp::InterpolationPair;
use serde::{Deserialize, Serialize};

/// Forward run of the configured (true) model.
pub fn forward(setup: &Setup, receivers: Option<&ReceiverSet>) -> Result<ForwardRun> {
    let p = ForwardProblem {
        system: &setup.system,
        model: &setup.model,
        receivers,
        initial: &setup.initial,
        t0: 0.0,
        steps: &setup.steps,
        v_tol: setup.v_tol,
        locked: setup.locked,
    };
    run_forward(&p)
}

/// Inverse-crime data: receiver measurements of the true model at every stage.
pub fn synthetic_data(setup: &Setup) -> Result<Vec<Vec<f64>>> {
    let mut rs = setup.receivers.clone();
    rs.data = None;
    Ok(forward(setup, Some(&rs))?.history.measurements)
}

pub fn with_data(receivers: &ReceiverSet, data: Vec<Vec<f64>>) -> ReceiverSet {
    let mut rs = receivers.clone();
    rs.data = Some(data);
    rs
}

pub fn objective<'a>(
    cfg: &RunConfig,
    setup: &'a Setup,
    receivers: &'a ReceiverSet,
    interp: &'a InterpolationPair,
    param: Param,
) -> MisfitObjective<'a> {
    MisfitObjective {
        system: &setup.system,
        model: &setup.model,
        receivers,
        steps: &setup.steps,
        v_init: cfg.friction.v_init,
        param,
        interp,
        v_tol: setup.v_tol,
        regularization: None,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub param: Param,
    pub coarse_x: Vec<f64>,
    pub p0: Vec<f64>,
    pub misfit: f64,
    pub fine_x: Vec<f64>,
    pub fine_gradient: Vec<f64>,
    pub psi0_gradient: Vec<f64>,
    pub curve: ErrorCurve,
    pub threshold: f64,
    pub min_error: f64,
    pub min_delta: f64,
    pub v_shaped: bool,
    pub passed: bool,
}

/// Gradient check at `grad_check.initial_factor` times the restricted true field.
pub fn grad_check(cfg: &RunConfig, setup: &Setup, data: Vec<Vec<f64>>, jobs: usize) -> Result<GradCheckReport> {
    let param = cfg.grad_check.param;
    if setup.locked {
        return Err(Error::Config("gradient check needs an active friction law".into()));
    }
    let interp = cfg.interpolation()?;
    let rs = with_data(&setup.receivers, data);
    let obj = objective(cfg, setup, &rs, &interp, param);
    let factor = cfg.grad_check.initial_factor;
    let p0: Vec<f64> = interp.to_coarse(&setup.model.field(param)).iter().map(|v| factor * v).collect();
    let eval = obj.evaluate(&p0)?;
    log::info!("adjoint gradient at misfit {:.6e}", eval.misfit);
    let deltas = log_deltas(cfg.grad_check.log10_delta, cfg.grad_check.count);
    let curve = fd_gradient_check(|p| obj.misfit(p), &p0, &eval.coarse_gradient, &deltas, jobs)?;
    let (min_error, min_delta) = curve.minimum().map_or((f64::NAN, f64::NAN), |p| (p.error, p.delta));
    let v_shaped = curve.is_v_shaped(3.0);
    let threshold = cfg.grad_check.threshold;
    Ok(GradCheckReport {
        param,
        coarse_x: interp.coarse_nodes(),
        p0,
        misfit: eval.misfit,
        fine_x: setup.system.fault_x().to_vec(),
        fine_gradient: eval.fine_gradient,
        psi0_gradient: eval.psi0_gradient,
        passed: min_error <= threshold,
        curve,
        threshold,
        min_error,
        min_delta,
        v_shaped,
    })
}

/// Inversion with the configured starting guess, bounds and optimizer settings.
pub fn inversion_problem<'a>(
    cfg: &RunConfig,
    setup: &'a Setup,
    receivers: &'a ReceiverSet,
    interp: &'a InterpolationPair,
) -> InversionProblem<'a> {
    let objective = objective(cfg, setup, receivers, interp, cfg.inversion.param);
    let initial = cfg.initial_guess(&setup.model, interp);
    let options = cfg.lbfgs_options(&initial);
    InversionProblem { objective, initial, options }
}
