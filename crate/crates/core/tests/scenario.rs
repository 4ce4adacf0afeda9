use ftsim_core::integrators::{integrate, Control, IntegrationStats, Method};
use ftsim_core::model::FaultModel;
use ftsim_core::reduction::reduce;
use ftsim_core::scenario::{switch_state, Scenario, ScenarioConfig, Verdict};
use ftsim_core::ScenarioError;

fn scenario() -> Scenario {
    Scenario::new(FaultModel::first_benchmark()).unwrap()
}

fn short(t_break: f64, post: f64) -> ScenarioConfig {
    ScenarioConfig {
        t_break,
        t_horizon: Some(0.1 + t_break + post),
        ..Default::default()
    }
}

#[test]
fn fault_switch_drops_shorted_node_and_keeps_the_rest() {
    let sc = scenario();
    let mut integ = Method::SpMidpoint.build(&sc.stages[0], &sc.initial, &Default::default()).unwrap();
    let mut stats = IntegrationStats::default();
    integrate(integ.as_mut(), 1e-4, 0.1, usize::MAX, &mut stats, &mut |_| Control::Continue).unwrap();
    let before = integ.full_state();
    let (after, rep) = switch_state(&sc.stages[0], &sc.reduced[1], &before).unwrap();

    assert_eq!(after.psi.len(), 8);
    assert_eq!(after.theta, before.theta);
    assert_eq!(after.theta_dot, before.theta_dot);
    // node 1 flux is continuous, node 2 is gone, windings carry over
    assert_eq!(after.psi[0], before.psi[0]);
    assert_eq!(after.psi[1], before.psi[1]);
    for w in 0..4 {
        assert_eq!(after.psi[4 + w], before.psi[6 + w]);
    }
    assert!(rep.flux_continuity_exact);
    assert!(rep.algebraic_residual <= 1e-9, "{}", rep.algebraic_residual);

    // the rebuilt state satisfies every row of the new stage at the switch
    let st = &sc.stages[1];
    let lhs = st.conductance.component_mul(&after.psi_dot) + st.n_matrix(after.theta[4]) * &after.psi;
    let rhs = st.forcing_at(after.t);
    assert!((lhs - &rhs).amax() <= 1e-9 * rhs.amax());
}

#[test]
fn reduced_torque_equals_lifted_torque() {
    let sc = scenario();
    for (stage, red) in sc.stages.iter().zip(&sc.reduced) {
        let mut integ = Method::SpEuler.build(stage, &sc.initial_for(stage), &Default::default()).unwrap();
        let mut stats = IntegrationStats::default();
        integrate(integ.as_mut(), 1e-4, 0.02, usize::MAX, &mut stats, &mut |_| Control::Continue).unwrap();
        let full = integ.full_state();
        let probe = integ.probe();
        let lifted = stage.torque_em(&full.psi, full.theta[4]);
        let reduced = red.torque_em(&red.pick2(&full.psi), full.theta[4]);
        assert!((probe.torque_em - lifted).abs() <= 1e-9 * lifted.abs());
        assert!((reduced - lifted).abs() <= 1e-9 * lifted.abs());
    }
}

trait InitialFor {
    fn initial_for(&self, stage: &ftsim_core::model::StageSystem) -> ftsim_core::state::FullState;
}

impl InitialFor for Scenario {
    /// Consistent data for any stage, obtained by switching the pre-fault
    /// equilibrium state onto it.
    fn initial_for(&self, stage: &ftsim_core::model::StageSystem) -> ftsim_core::state::FullState {
        let red = reduce(stage).unwrap();
        switch_state(&self.stages[0], &red, &self.initial).unwrap().0
    }
}

#[test]
fn half_second_fault_recovers() {
    let out = scenario().run(&short(0.5, 10.0), usize::MAX, &mut |_| {}).unwrap();
    assert_eq!(out.verdict, Verdict::Stable, "{out:?}");
    assert_eq!(out.switches.len(), 2);
    assert!(out.max_angle_step_deg < 90.0);
    assert_eq!(out.stats.dirac_violations, 0);
}

#[test]
fn no_fault_limit_skips_the_short() {
    let mut rows = Vec::new();
    let out = scenario().run(&short(0.0, 10.0), 1000, &mut |r| rows.push(r.clone())).unwrap();
    assert_eq!(out.switches.len(), 1);
    assert_eq!((out.switches[0].from_stage, out.switches[0].to_stage), (1, 3));
    assert!(rows.iter().all(|r| r.stage != 2));
    assert_eq!(out.verdict, Verdict::Stable);
    assert!(rows.iter().all(|r| r.delta_omega.abs() < 5.0));
}

#[test]
fn long_fault_loses_synchronism() {
    let out = scenario().run(&short(0.78, 60.0), usize::MAX, &mut |_| {}).unwrap();
    assert_eq!(out.verdict, Verdict::Unstable);
    assert!(out.unstable_at.unwrap() < out.grid.t_end());
}

#[test]
fn rows_share_one_schema_across_methods() {
    let sc = scenario();
    let mut widths = Vec::new();
    for m in [Method::PcBeta1, Method::SpEuler] {
        let cfg = ScenarioConfig { method: m, ..short(0.05, 0.05) };
        let mut rows = Vec::new();
        sc.run(&cfg, 100, &mut |r| rows.push(r.csv_fields().len())).unwrap();
        assert!(rows.windows(2).all(|w| w[0] == w[1]));
        widths.push(rows[0]);
    }
    assert_eq!(widths[0], widths[1]);
    assert_eq!(widths[0], ftsim_core::scenario::csv_header(3).len());
}

#[test]
fn decimation_spaces_rows_by_ten_milliseconds() {
    let mut ts = Vec::new();
    scenario().run(&short(0.05, 0.1), 100, &mut |r| ts.push((r.t, r.stage))).unwrap();
    // the switching instants appear twice, once per stage
    let stage1: Vec<f64> = ts.iter().filter(|r| r.1 == 1).map(|r| r.0).collect();
    for w in stage1.windows(2) {
        assert!((w[1] - w[0] - 0.01).abs() < 1e-9);
    }
}

#[test]
fn stable_endpoints_do_not_bracket() {
    let sc = scenario();
    let err = sc.find_cct(&short(0.3, 10.0), 0.3, 0.5, 0.05, 1).unwrap_err();
    assert!(matches!(err, ScenarioError::NotBracketing { .. }), "{err}");
}

#[test]
fn narrow_bracket_is_verified_and_returned() {
    let sc = scenario();
    let res = sc.find_cct(&ScenarioConfig::default(), 0.77, 0.78, 0.01, 2).unwrap();
    assert_eq!((res.stable, res.unstable), (0.77, 0.78));
    assert_eq!(res.probes.len(), 2);
    assert!(res.probes.iter().all(|p| p.endpoint));
}
