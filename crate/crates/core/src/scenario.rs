//! Three-stage fault transient: pre-fault network, ground short, cleared
//! network. Switching maps, diagnostics, stability verdict and the
//! critical-clearing-time search.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::equilibrium::solve_equilibrium;
use crate::error::{ScenarioError, StepError};
use crate::integrators::{integrate, Control, Finish, IntegrationStats, Method, NewtonSettings, Probe, Sample};
use crate::model::{index_label, FaultModel, StageSystem, ROTOR_MASS};
use crate::reduction::{reduce, ReducedSystem};
use crate::state::{power_angle_raw, FullState, Unwrapper};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityCriteria {
    /// rad/s
    pub omega_tol: f64,
    /// deg; `None` uses the cleared-network equilibrium power angle.
    pub angle_target: Option<f64>,
    /// s
    pub angle_window: f64,
    /// deg
    pub pole_slip_limit: f64,
    /// deg
    pub angle_band: f64,
    /// rad/s
    pub omega_limit: f64,
}

impl Default for StabilityCriteria {
    fn default() -> Self {
        Self {
            omega_tol: 0.5,
            angle_target: None,
            angle_window: 5.0,
            pole_slip_limit: 180.0,
            angle_band: 5.0,
            omega_limit: 50.0,
        }
    }
}

impl StabilityCriteria {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let all = [self.omega_tol, self.angle_window, self.pole_slip_limit, self.angle_band, self.omega_limit];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(ScenarioError::Config("stability thresholds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub t_fault: f64,
    pub t_break: f64,
    /// Absolute end time; defaults to 60 s of post-clearing simulation.
    pub t_horizon: Option<f64>,
    pub method: Method,
    pub h: f64,
    pub stability: StabilityCriteria,
    pub newton: NewtonSettings,
    /// End the run as soon as the verdict is certain to be unstable.
    pub stop_when_unstable: bool,
}

pub const DEFAULT_POST_CLEARING: f64 = 60.0;

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            t_fault: 0.1,
            t_break: 0.5,
            t_horizon: None,
            method: Method::SpMidpoint,
            h: 1e-4,
            stability: StabilityCriteria::default(),
            newton: NewtonSettings::default(),
            stop_when_unstable: true,
        }
    }
}

/// Switch times rounded to the integration grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Grid {
    pub h: f64,
    pub n_fault: usize,
    pub n_break: usize,
    pub n_total: usize,
}

impl Grid {
    pub fn t_fault(&self) -> f64 {
        self.n_fault as f64 * self.h
    }
    pub fn t_clear(&self) -> f64 {
        (self.n_fault + self.n_break) as f64 * self.h
    }
    pub fn t_end(&self) -> f64 {
        self.n_total as f64 * self.h
    }
}

impl ScenarioConfig {
    pub fn horizon(&self) -> f64 {
        self.t_horizon.unwrap_or(self.t_fault + self.t_break + DEFAULT_POST_CLEARING)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Config(m.into()));
        if !(self.h.is_finite() && self.h > 0.0) {
            return bad("h must be positive");
        }
        if !(self.t_fault.is_finite() && self.t_fault > 0.0) {
            return bad("t_fault must be positive");
        }
        if !(self.t_break.is_finite() && self.t_break >= 0.0) {
            return bad("t_break must be non-negative");
        }
        if !(self.horizon() > self.t_fault + self.t_break) {
            return bad("t_horizon must exceed t_fault + t_break");
        }
        self.newton.validate().map_err(ScenarioError::Config)?;
        self.stability.validate()
    }

    pub fn grid(&self) -> Grid {
        let n_fault = (self.t_fault / self.h).round() as usize;
        let n_break = (self.t_break / self.h).round() as usize;
        let n_total = ((self.horizon() / self.h).round() as usize).max(n_fault + n_break + 1);
        Grid {
            h: self.h,
            n_fault: n_fault.max(1),
            n_break,
            n_total,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// One emitted trajectory row; fluxes use the full original indexing with
/// removed components set to zero so every stage shares one schema.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub stage: usize,
    pub delta_omega: f64,
    pub torque_em: f64,
    pub power_angle_deg: f64,
    pub psi: Vec<f64>,
    pub theta: Vec<f64>,
}

/// CSV header matching [`DiagnosticsRow::csv_fields`].
pub fn csv_header(n_nodes: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "stage", "delta_omega", "torque_em", "power_angle_deg"].iter().map(|s| s.to_string()).collect();
    h.extend((0..2 * n_nodes + 4).map(|k| format!("psi_{}", index_label(n_nodes, k))));
    h.extend((1..=6).map(|k| format!("theta_{k}")));
    h
}

impl DiagnosticsRow {
    pub fn csv_fields(&self) -> Vec<String> {
        let f = |x: f64| format!("{x:.16e}");
        let mut out = vec![f(self.t), self.stage.to_string(), f(self.delta_omega), f(self.torque_em), f(self.power_angle_deg)];
        out.extend(self.psi.iter().map(|&x| f(x)));
        out.extend(self.theta.iter().map(|&x| f(x)));
        out
    }
}

/// What happened at one switching instant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SwitchReport {
    pub t: f64,
    pub from_stage: usize,
    pub to_stage: usize,
    /// Λ₂ fluxes of the new stage equal the old ones bit for bit.
    pub flux_continuity_exact: bool,
    /// `‖N_{Λ₁,·}Ψ − f_{Λ₁}‖∞ / ‖Ψ‖∞` after the switch.
    pub algebraic_residual: f64,
}

/// Maps a state of `prev` to consistent initial data of `next`: angles and
/// speeds kept, shorted components dropped, `Λ₂` fluxes kept, `Λ₁` fluxes and
/// all voltages rebuilt from the new constraints.
pub fn switch_state(prev: &StageSystem, next: &ReducedSystem, state: &FullState) -> Result<(FullState, SwitchReport), ScenarioError> {
    let ns = &next.stage;
    if prev.n_nodes != ns.n_nodes {
        return Err(ScenarioError::Config(format!("cannot map a {}-node stage onto a {}-node stage", prev.n_nodes, ns.n_nodes)));
    }
    let psi_orig = prev.expand(&state.psi);
    let psi_stage = ns.restrict(&psi_orig);
    let theta5 = state.theta[ROTOR_MASS];
    let theta_dot5 = state.theta_dot[ROTOR_MASS];

    let psi_tilde = next.pick2(&psi_stage);
    let psi = next.lift(theta5, &psi_tilde);
    let flux_continuity_exact = next.partition.local2.iter().all(|&k| psi[k].to_bits() == psi_stage[k].to_bits());

    // Λ₂ voltages from the resistive rows, Λ₁ voltages by the product rule
    let n = ns.n_matrix(theta5);
    let f = ns.forcing_at(state.t);
    let np = &n * &psi;
    let v_tilde = DVector::from_iterator(next.dim(), next.partition.local2.iter().map(|&k| (f[k] - np[k]) / ns.conductance[k]));
    let psi_dot = next.lift_rate(theta5, theta_dot5, &psi_tilde, &v_tilde);

    let scale = psi.amax().max(f64::MIN_POSITIVE);
    let algebraic_residual = next.partition.local1.iter().map(|&k| (np[k] - f[k]).abs()).fold(0.0, f64::max) / scale;

    let out = FullState {
        t: state.t,
        psi_dot,
        psi,
        theta_dot: state.theta_dot.clone(),
        theta: state.theta.clone(),
    };
    let report = SwitchReport {
        t: state.t,
        from_stage: 0,
        to_stage: 0,
        flux_continuity_exact,
        algebraic_residual,
    };
    Ok((out, report))
}

/// Running verdict over a trajectory.
#[derive(Clone, Debug)]
pub struct StabilityMonitor {
    pub criteria: StabilityCriteria,
    pub target: f64,
    pub t_clear: f64,
    pub window_start: f64,
    unstable_at: Option<f64>,
    sum_abs_dw: f64,
    sum_angle: f64,
    count: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct WindowStats {
    pub t_start: f64,
    pub samples: usize,
    pub mean_abs_delta_omega: f64,
    pub mean_power_angle_deg: f64,
}

impl StabilityMonitor {
    pub fn new(criteria: StabilityCriteria, target: f64, t_clear: f64, t_end: f64) -> Self {
        let window_start = (t_end - criteria.angle_window).max(t_clear);
        Self {
            criteria,
            target,
            t_clear,
            window_start,
            unstable_at: None,
            sum_abs_dw: 0.0,
            sum_angle: 0.0,
            count: 0,
        }
    }

    /// Feeds one sample; returns true once instability is certain.
    pub fn push(&mut self, t: f64, delta_omega: f64, power_angle_deg: f64) -> bool {
        if t >= self.t_clear && self.unstable_at.is_none() {
            let slipped = (power_angle_deg - self.target).abs() > self.criteria.pole_slip_limit;
            let runaway = delta_omega.abs() > self.criteria.omega_limit;
            if slipped || runaway || !delta_omega.is_finite() {
                self.unstable_at = Some(t);
            }
        }
        if t >= self.window_start {
            self.sum_abs_dw += delta_omega.abs();
            self.sum_angle += power_angle_deg;
            self.count += 1;
        }
        self.unstable_at.is_some()
    }

    pub fn unstable_at(&self) -> Option<f64> {
        self.unstable_at
    }

    pub fn window(&self) -> WindowStats {
        let n = self.count.max(1) as f64;
        WindowStats {
            t_start: self.window_start,
            samples: self.count,
            mean_abs_delta_omega: self.sum_abs_dw / n,
            mean_power_angle_deg: self.sum_angle / n,
        }
    }

    /// Verdict for a run that ended at `t_reached` (the horizon if complete).
    pub fn verdict(&self, completed: bool) -> Verdict {
        if self.unstable_at.is_some() {
            return Verdict::Unstable;
        }
        if !completed || self.count == 0 {
            return Verdict::Inconclusive;
        }
        let w = self.window();
        if w.mean_abs_delta_omega <= self.criteria.omega_tol && (w.mean_power_angle_deg - self.target).abs() <= self.criteria.angle_band {
            Verdict::Stable
        } else {
            Verdict::Inconclusive
        }
    }
}

/// Verdict of a stored trajectory (rows from the cleared stage onward).
pub fn stability_verdict(rows: &[DiagnosticsRow], criteria: &StabilityCriteria, target: f64, t_clear: f64, t_end: f64) -> Verdict {
    let mut mon = StabilityMonitor::new(criteria.clone(), target, t_clear, t_end);
    for r in rows {
        mon.push(r.t, r.delta_omega, r.power_angle_deg);
    }
    let completed = rows.last().is_some_and(|r| r.t >= t_end - 1e-9);
    mon.verdict(completed)
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioOutcome {
    pub method: Method,
    pub verdict: Verdict,
    pub grid: Grid,
    pub angle_target_deg: f64,
    pub t_reached: f64,
    pub unstable_at: Option<f64>,
    pub window: WindowStats,
    pub switches: Vec<SwitchReport>,
    pub stats: IntegrationStats,
    /// Largest power-angle change between consecutive steps (deg).
    pub max_angle_step_deg: f64,
    pub failure: Option<String>,
}

/// Prepared three-stage problem: stage systems, their reductions and the
/// two equilibria.
pub struct Scenario {
    pub model: FaultModel,
    pub stages: [StageSystem; 3],
    pub reduced: [ReducedSystem; 3],
    pub initial: FullState,
    pub angle_target: f64,
}

impl Scenario {
    pub fn new(model: FaultModel) -> Result<Self, ScenarioError> {
        model.validate()?;
        if model.stages.len() != 3 {
            return Err(ScenarioError::Config(format!("expected 3 network stages, found {}", model.stages.len())));
        }
        let stages = [model.stage(0)?, model.stage(1)?, model.stage(2)?];
        let reduced = [reduce(&stages[0])?, reduce(&stages[1])?, reduce(&stages[2])?];
        let initial = solve_equilibrium(&stages[0])?.alpha_beta_state(&stages[0], 0.0);
        let angle_target = solve_equilibrium(&stages[2])?.power_angle_deg(&stages[2]);
        Ok(Self {
            model,
            stages,
            reduced,
            initial,
            angle_target,
        })
    }

    /// Runs pre-fault, fault and cleared stages, streaming decimated rows to
    /// `sink`. A step failure ends the run with an inconclusive verdict.
    pub fn run(&self, config: &ScenarioConfig, decimation: usize, sink: &mut dyn FnMut(&DiagnosticsRow)) -> Result<ScenarioOutcome, ScenarioError> {
        config.validate()?;
        let grid = config.grid();
        let target = config.stability.angle_target.unwrap_or(self.angle_target);
        let mut monitor = StabilityMonitor::new(config.stability.clone(), target, grid.t_clear(), grid.t_end());
        let mut stats = IntegrationStats::default();
        let mut switches = Vec::new();
        let omega_s = self.stages[0].forcing.omega_s;

        let mut unwrap = Unwrapper::new();
        let mut last_angle: Option<f64> = None;
        let mut max_jump = 0.0f64;

        let plan: Vec<(usize, f64)> = if grid.n_break == 0 {
            vec![(0, grid.t_fault()), (2, grid.t_end())]
        } else {
            vec![(0, grid.t_fault()), (1, grid.t_clear()), (2, grid.t_end())]
        };

        let mut state = self.initial.clone();
        let mut prev_stage: Option<usize> = None;
        let mut failure: Option<StepError> = None;
        let mut stopped = false;
        let mut t_reached = 0.0;

        for &(si, t_stop) in &plan {
            let stage = &self.stages[si];
            if let Some(p) = prev_stage {
                let (s, mut rep) = switch_state(&self.stages[p], &self.reduced[si], &state)?;
                rep.from_stage = p + 1;
                rep.to_stage = si + 1;
                log::info!("switch {} -> {} at t = {:.6}: algebraic residual {:.3e}", rep.from_stage, rep.to_stage, rep.t, rep.algebraic_residual);
                switches.push(rep);
                state = s;
            }
            let mut integ = config.method.build(stage, &state, &config.newton)?;
            let mut observer = |s: &Sample| -> Control {
                let p: Probe = s.probe;
                let angle = unwrap.push(power_angle_raw(p.rotor_angle, p.node1_voltage)).to_degrees();
                if let Some(prev) = last_angle {
                    if s.report.is_some() {
                        max_jump = max_jump.max((angle - prev).abs());
                    }
                }
                last_angle = Some(angle);
                let dw = p.rotor_speed - omega_s;
                // the first sample of a later stage repeats the switching instant
                let fresh = s.report.is_some() || prev_stage.is_none();
                let unstable = fresh && monitor.push(p.t, dw, angle);
                if let Some(full) = &s.full {
                    sink(&DiagnosticsRow {
                        t: p.t,
                        stage: si + 1,
                        delta_omega: dw,
                        torque_em: p.torque_em,
                        power_angle_deg: angle,
                        psi: s.stage.expand(&full.psi).iter().copied().collect(),
                        theta: full.theta.iter().copied().collect(),
                    });
                }
                if unstable && config.stop_when_unstable {
                    Control::Stop
                } else {
                    Control::Continue
                }
            };
            let res = integrate(integ.as_mut(), grid.h, t_stop, decimation, &mut stats, &mut observer);
            t_reached = integ.time();
            state = integ.full_state();
            match res {
                Ok(Finish::Reached) => {}
                Ok(Finish::Stopped) => {
                    stopped = true;
                    break;
                }
                Err(e) => {
                    log::error!("integration aborted at t = {:.6}: {e}", t_reached);
                    failure = Some(e);
                    break;
                }
            }
            prev_stage = Some(si);
        }

        let completed = failure.is_none() && !stopped;
        let verdict = monitor.verdict(completed);
        Ok(ScenarioOutcome {
            method: config.method,
            verdict,
            grid,
            angle_target_deg: target,
            t_reached,
            unstable_at: monitor.unstable_at(),
            window: monitor.window(),
            switches,
            stats,
            max_angle_step_deg: max_jump,
            failure: failure.map(|e| e.to_string()),
        })
    }
}

/// Convenience wrapper: prepare and run in one call.
pub fn run_three_stage(model: FaultModel, config: &ScenarioConfig, decimation: usize, sink: &mut dyn FnMut(&DiagnosticsRow)) -> Result<ScenarioOutcome, ScenarioError> {
    Scenario::new(model)?.run(config, decimation, sink)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeRecord {
    pub t_break: f64,
    pub verdict: Verdict,
    pub horizon: f64,
    pub t_reached: f64,
    pub unstable_at: Option<f64>,
    pub window: WindowStats,
    pub endpoint: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CctResult {
    pub stable: f64,
    pub unstable: f64,
    pub probes: Vec<ProbeRecord>,
}

impl CctResult {
    pub fn width(&self) -> f64 {
        self.unstable - self.stable
    }
}

impl Scenario {
    fn probe(&self, base: &ScenarioConfig, t_break: f64, endpoint: bool) -> Result<ProbeRecord, ScenarioError> {
        let mut cfg = base.clone();
        cfg.t_break = t_break;
        let post = base.t_horizon.map_or(DEFAULT_POST_CLEARING, |h| h - base.t_fault - base.t_break);
        cfg.t_horizon = Some(cfg.t_fault + t_break + post);
        let mut widened = false;
        loop {
            let out = self.run(&cfg, usize::MAX, &mut |_| {})?;
            let rec = ProbeRecord {
                t_break,
                verdict: out.verdict,
                horizon: cfg.horizon(),
                t_reached: out.t_reached,
                unstable_at: out.unstable_at,
                window: out.window,
                endpoint,
            };
            log::info!(
                "probe t_break = {:.4}: {} (horizon {:.1} s, window |dw| {:.3e}, angle {:.3})",
                t_break,
                rec.verdict,
                rec.horizon,
                rec.window.mean_abs_delta_omega,
                rec.window.mean_power_angle_deg
            );
            if rec.verdict != Verdict::Inconclusive || widened {
                return Ok(rec);
            }
            widened = true;
            let post = cfg.horizon() - cfg.t_fault - t_break;
            cfg.t_horizon = Some(cfg.t_fault + t_break + 2.0 * post);
            log::warn!("probe t_break = {t_break:.4} inconclusive; widening horizon to {:.1} s", cfg.horizon());
        }
    }

    fn probe_many(&self, base: &ScenarioConfig, points: &[f64], endpoint: bool, jobs: usize) -> Result<Vec<ProbeRecord>, ScenarioError> {
        if jobs <= 1 || points.len() <= 1 {
            return points.iter().map(|&t| self.probe(base, t, endpoint)).collect();
        }
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(jobs) {
            let results: Vec<_> = std::thread::scope(|sc| {
                let handles: Vec<_> = chunk.iter().map(|&t| sc.spawn(move || self.probe(base, t, endpoint))).collect();
                handles.into_iter().map(|h| h.join().expect("probe thread panicked")).collect()
            });
            for r in results {
                out.push(r?);
            }
        }
        Ok(out)
    }

    /// Bisection (multisection with `jobs > 1`) on the break time.
    pub fn find_cct(&self, base: &ScenarioConfig, lo: f64, hi: f64, tol: f64, jobs: usize) -> Result<CctResult, ScenarioError> {
        if !(lo >= 0.0 && hi > lo && tol > 0.0) {
            return Err(ScenarioError::Config(format!("invalid bracket [{lo}, {hi}] or tolerance {tol}")));
        }
        let mut probes = self.probe_many(base, &[lo, hi], true, jobs)?;
        let (vl, vh) = (probes[0].verdict, probes[1].verdict);
        if vl == Verdict::Inconclusive || vh == Verdict::Inconclusive {
            let t = if vl == Verdict::Inconclusive { lo } else { hi };
            return Err(ScenarioError::Inconclusive { t_break: t });
        }
        if !(vl == Verdict::Stable && vh == Verdict::Unstable) {
            return Err(ScenarioError::NotBracketing {
                lo,
                hi,
                lo_verdict: vl.to_string(),
                hi_verdict: vh.to_string(),
            });
        }
        let (mut a, mut b) = (lo, hi);
        let k = jobs.max(1);
        while b - a > tol * (1.0 + 1e-9) {
            let pts: Vec<f64> = (1..=k).map(|i| a + (b - a) * i as f64 / (k + 1) as f64).collect();
            let recs = self.probe_many(base, &pts, false, jobs)?;
            for r in &recs {
                if r.verdict == Verdict::Inconclusive {
                    return Err(ScenarioError::Inconclusive { t_break: r.t_break });
                }
            }
            let first_unstable = recs.iter().position(|r| r.verdict == Verdict::Unstable);
            if let Some(i) = first_unstable {
                if recs[i..].iter().any(|r| r.verdict == Verdict::Stable) {
                    log::warn!("stability is not monotone in the break time inside [{a}, {b}]");
                }
            }
            let (na, nb) = match first_unstable {
                Some(0) => (a, pts[0]),
                Some(i) => (pts[i - 1], pts[i]),
                None => (pts[k - 1], b),
            };
            a = na;
            b = nb;
            probes.extend(recs);
        }
        Ok(CctResult { stable: a, unstable: b, probes })
    }
}
