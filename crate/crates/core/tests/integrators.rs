mod common;

use ftsim_core::equilibrium::{from_alpha_beta, solve_equilibrium};
use ftsim_core::integrators::{integrate, Control, IntegrationStats, Method, NewtonSettings};

use common::*;

#[test]
fn pre_fault_equilibrium_persists_for_one_second() {
    let (stage, s0) = stage_one();
    let eq = solve_equilibrium(&stage).unwrap();
    let mut integ = Method::SpMidpoint.build(&stage, &s0, &NewtonSettings::default()).unwrap();
    let mut stats = IntegrationStats::default();
    let mut worst = 0.0f64;
    integrate(integ.as_mut(), 1e-4, 1.0, 100, &mut stats, &mut |s| {
        if let Some(f) = &s.full {
            let (phi, delta) = from_alpha_beta(&stage, f.t, &f.psi, &f.theta);
            worst = worst.max((&phi - &eq.phi).amax() / eq.phi.amax());
            worst = worst.max((&delta - &eq.delta).amax() / eq.delta.amax());
        }
        Control::Continue
    })
    .unwrap();
    assert!(worst <= 1e-3, "{worst}");
    assert_eq!(stats.dirac_violations, 0);
    assert!(stats.mean_newton_iterations() <= 4.0, "{}", stats.mean_newton_iterations());
}

#[test]
fn convergence_orders_on_pre_fault_stage() {
    let (stage, s0) = stage_one();
    let hs = [4e-5, 2e-5, 1e-5];
    let t_end = 0.01;
    for method in Method::ALL {
        let reference = run_to(method, &stage, &s0, hs[2] / 16.0, t_end);
        let errs: Vec<f64> = hs.iter().map(|&h| rel_error(&stage, &run_to(method, &stage, &s0, h, t_end), &reference)).collect();
        let p = slope(&hs, &errs);
        let expected = method.order() as f64;
        assert!((p - expected).abs() <= 0.15, "{method}: slope {p}, errors {errs:?}");
    }
}

#[test]
fn midpoint_and_euler_approach_each_other_linearly() {
    let (stage, s0) = stage_one();
    let diff = |h: f64| {
        let a = run_to(Method::SpEuler, &stage, &s0, h, 0.1);
        let b = run_to(Method::SpMidpoint, &stage, &s0, h, 0.1);
        rel_error(&stage, &a, &b)
    };
    let (d1, d2) = (diff(2e-4), diff(1e-4));
    assert!((d1 / d2 - 2.0).abs() < 0.3, "{d1} {d2}");
}

#[test]
fn lifted_reduced_trajectory_matches_unreduced_dae() {
    let (stage, s0) = stage_one();
    let h = 1e-4;
    let oracle = FullDaeEuler { stage: &stage };
    let d = stage.dim();
    let mut x = flat(&s0);
    let mut oracle_states = Vec::new();
    for i in 0..1000 {
        x = oracle.step(&x, (i + 1) as f64 * h, h);
        oracle_states.push(x.clone());
    }

    let mut integ = Method::SpEuler.build(&stage, &s0, &NewtonSettings::default()).unwrap();
    let red = ftsim_core::reduction::reduce(&stage).unwrap();
    let mut stats = IntegrationStats::default();
    let mut worst = 0.0f64;
    integrate(integ.as_mut(), h, 0.1, 1, &mut stats, &mut |s| {
        if s.step == 0 {
            return Control::Continue;
        }
        let f = s.full.as_ref().unwrap();
        let o = &oracle_states[s.step - 1];
        let blocks = [
            (red.pick2(&f.psi_dot), red.pick2(&o.rows(0, d).into_owned())),
            (f.psi.clone(), o.rows(d, d).into_owned()),
            (f.theta_dot.clone(), o.rows(2 * d, 6).into_owned()),
            (f.theta.clone(), o.rows(2 * d + 6, 6).into_owned()),
        ];
        for (a, b) in blocks {
            worst = worst.max((&a - &b).amax() / b.amax());
        }
        Control::Continue
    })
    .unwrap();
    assert!(worst <= 1e-6, "{worst}");
}
