mod common;

use common::small_config;
use rupture_core::friction::Param;
use rupture_core::lbfgs::Termination;
use rupture_core::pipeline;

#[test]
fn inverse_crime_misfit_decreases_monotonically() {
    let mut c = small_config();
    c.inversion.param = Param::A;
    c.inversion.initial = Some(0.0135);
    c.inversion.max_iterations = 6;
    let s = c.build().unwrap();
    let rs = pipeline::with_data(&s.receivers, pipeline::synthetic_data(&s).unwrap());
    let interp = c.interpolation().unwrap();
    let mut seen = 0;
    let out = pipeline::inversion_problem(&c, &s, &rs, &interp)
        .solve(None, |_, _| {
            seen += 1;
            true
        })
        .unwrap();
    let f = out.trace.misfits();
    assert_eq!(seen, out.trace.records.len());
    assert!(f.windows(2).all(|w| w[1] < w[0]), "{f:?}");
    assert!(f.last().unwrap() * 10.0 < f[0], "{f:?}");
    assert!(matches!(out.outcome.termination, Termination::MaxIterations | Termination::GradientTolerance));
}

#[test]
fn observer_can_stop_the_inversion() {
    let mut c = small_config();
    c.inversion.initial = Some(0.0135);
    c.inversion.max_iterations = 10;
    let s = c.build().unwrap();
    let rs = pipeline::with_data(&s.receivers, pipeline::synthetic_data(&s).unwrap());
    let interp = c.interpolation().unwrap();
    let out = pipeline::inversion_problem(&c, &s, &rs, &interp).solve(None, |r, _| r.iteration < 2).unwrap();
    assert_eq!(out.outcome.termination, Termination::Stopped);
    assert_eq!(out.outcome.state.iteration, 2);
}
