//! Misfit objective over coarse parameter grids and the L-BFGS inversion driver.

use crate::adjoint::{adjoint_integrate, assemble_gradient};
use crate::error::{Error, Result};
use crate::forward::{run_forward, ForwardProblem, StageHistory, System};
use crate::friction::{FrictionModel, Param};
use crate::lbfgs::{self, Evaluation, IterationRecord, LbfgsOptions, LbfgsOutcome, LbfgsState};
use crate::receivers::ReceiverSet;
use crate::sbp::InterpolationPair;
use serde::{Deserialize, Serialize};

/// Additive penalty on the coarse iterate.
pub trait Regularization: Send + Sync {
    /// Value and coarse gradient.
    fn evaluate(&self, coarse: &[f64]) -> (f64, Vec<f64>);
}

/// Fine model with the coarse iterate interpolated into the field of `param`.
pub fn parameter_embed(coarse: &[f64], interp: &InterpolationPair, model: &FrictionModel, param: Param) -> Result<FrictionModel> {
    if !param.is_field() {
        return Err(Error::InvalidArgument(format!("{} is a scalar and has no coarse representation", param.name())));
    }
    if coarse.len() != interp.coarse_len() || interp.fine_len() != model.len() {
        return Err(Error::InvalidArgument(format!(
            "coarse iterate of length {} for a {} -> {} interpolation on {} fault nodes",
            coarse.len(),
            interp.coarse_len(),
            interp.fine_len(),
            model.len()
        )));
    }
    let mut out = model.clone();
    out.set_field(param, interp.to_fine(coarse));
    out.validate()?;
    Ok(out)
}

/// Misfit and gradient for one evaluation.
#[derive(Debug, Clone)]
pub struct MisfitEvaluation {
    pub misfit: f64,
    pub coarse_gradient: Vec<f64>,
    pub fine_gradient: Vec<f64>,
    pub psi0_gradient: Vec<f64>,
    pub history: StageHistory,
}

/// `F(p)` with `p` the coarse representation of one friction field.
pub struct MisfitObjective<'a> {
    pub system: &'a System,
    pub model: &'a FrictionModel,
    /// Receivers carrying the observed data.
    pub receivers: &'a ReceiverSet,
    pub steps: &'a [f64],
    /// Initial slip rate split as `-v_init` and `+v_init` across the fault.
    pub v_init: f64,
    pub param: Param,
    pub interp: &'a InterpolationPair,
    pub v_tol: f64,
    pub regularization: Option<&'a dyn Regularization>,
}

impl MisfitObjective<'_> {
    pub fn embed(&self, coarse: &[f64]) -> Result<FrictionModel> {
        parameter_embed(coarse, self.interp, self.model, self.param)
    }

    fn forward(&self, model: &FrictionModel) -> Result<StageHistory> {
        let initial = self.system.initial_state(-self.v_init, self.v_init, &model.psi0)?;
        let p = ForwardProblem {
            system: self.system,
            model,
            receivers: Some(self.receivers),
            initial: &initial,
            t0: 0.0,
            steps: self.steps,
            v_tol: self.v_tol,
            locked: false,
        };
        Ok(run_forward(&p)?.history)
    }

    fn penalty(&self, coarse: &[f64]) -> (f64, Option<Vec<f64>>) {
        match self.regularization {
            Some(r) => {
                let (v, g) = r.evaluate(coarse);
                (v, Some(g))
            }
            None => (0.0, None),
        }
    }

    pub fn misfit(&self, coarse: &[f64]) -> Result<f64> {
        let model = self.embed(coarse)?;
        Ok(self.forward(&model)?.misfit() + self.penalty(coarse).0)
    }

    pub fn evaluate(&self, coarse: &[f64]) -> Result<MisfitEvaluation> {
        let model = self.embed(coarse)?;
        let history = self.forward(&model)?;
        let adj = adjoint_integrate(self.system, &model, &history, self.receivers, false)?;
        let fine_gradient = assemble_gradient(self.system, &model, &history, &adj, self.param)?;
        let psi0_gradient = assemble_gradient(self.system, &model, &history, &adj, Param::Psi0)?;
        let mut coarse_gradient = self.interp.pull_back(&fine_gradient);
        let (pen, pen_grad) = self.penalty(coarse);
        if let Some(g) = pen_grad {
            coarse_gradient.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        Ok(MisfitEvaluation { misfit: history.misfit() + pen, coarse_gradient, fine_gradient, psi0_gradient, history })
    }

    /// Adapter for the optimizer: inadmissible models and blow-ups map to `None`.
    pub fn lbfgs_evaluation(&self, coarse: &[f64]) -> Result<Evaluation> {
        match self.evaluate(coarse) {
            Ok(e) => Ok(Some((e.misfit, e.coarse_gradient))),
            Err(Error::FrictionInvariant(msg)) => {
                log::debug!("rejected iterate: {msg}");
                Ok(None)
            }
            Err(e @ Error::Unstable { .. }) => {
                log::warn!("rejected iterate: {e}");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

/// Per-iteration record of an inversion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InversionTrace {
    pub n_receivers: usize,
    pub records: Vec<IterationRecord>,
}

impl InversionTrace {
    pub fn misfits(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.misfit).collect()
    }
}

pub struct InversionProblem<'a> {
    pub objective: MisfitObjective<'a>,
    pub initial: Vec<f64>,
    pub options: LbfgsOptions,
}

#[derive(Debug, Clone)]
pub struct InversionOutcome {
    pub coarse: Vec<f64>,
    pub model: FrictionModel,
    pub trace: InversionTrace,
    pub outcome: LbfgsOutcome,
}

impl InversionProblem<'_> {
    pub fn validate(&self) -> Result<()> {
        let n = self.objective.interp.coarse_len();
        if self.initial.len() != n {
            return Err(Error::InvalidArgument(format!("initial guess has {} entries, coarse grid has {n}", self.initial.len())));
        }
        if self.objective.param == Param::A {
            if let Some(i) = self.initial.iter().position(|&a| !(a > 0.0)) {
                return Err(Error::InvalidArgument(format!("initial a[{i}] = {} must be positive", self.initial[i])));
            }
            if let Some(l) = &self.options.lower {
                if let Some(i) = l.iter().position(|&a| !(a > 0.0)) {
                    return Err(Error::InvalidArgument(format!("lower bound on a[{i}] = {} must be positive", l[i])));
                }
            }
        }
        Ok(())
    }

    /// Runs or continues L-BFGS; `observer` may stop the run by returning `false`.
    pub fn solve<O>(&self, resume_from: Option<(LbfgsState, InversionTrace)>, mut observer: O) -> Result<InversionOutcome>
    where
        O: FnMut(&IterationRecord, &LbfgsState) -> bool,
    {
        self.validate()?;
        let eval = |x: &[f64]| self.objective.lbfgs_evaluation(x);
        let obs = |r: &IterationRecord, s: &LbfgsState| {
            log::info!("iter {:4} misfit {:.6e} |g| {:.3e} step {:.3e}", r.iteration, r.misfit, r.gradient_norm, r.step);
            observer(r, s)
        };
        let outcome = match resume_from {
            Some((state, trace)) => lbfgs::resume(eval, state, trace.records, &self.options, obs)?,
            None => lbfgs::minimize(eval, &self.initial, &self.options, obs)?,
        };
        let model = self.objective.embed(&outcome.state.x)?;
        Ok(InversionOutcome {
            coarse: outcome.state.x.clone(),
            model,
            trace: InversionTrace { n_receivers: self.objective.receivers.len(), records: outcome.trace.clone() },
            outcome,
        })
    }
}
