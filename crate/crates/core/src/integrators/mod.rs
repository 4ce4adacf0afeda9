//! Time integration: structure-preserving RK on the reduced descriptor
//! system and the predictor–corrector baseline on the unreduced one.

pub mod pc;
pub mod ph;
pub mod rk;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, StepError};
use crate::model::{StageSystem, MASS_COUNT, ROTOR_MASS};
use crate::reduction::reduce;
use crate::state::FullState;

pub use pc::{pc_step, PcState};
pub use ph::PhSystem;
pub use rk::{dirac_check, dirac_residual, rk_step, DiracCheck, JacobianMode, NewtonSettings, RkStep, RkTableau};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "sp-euler")]
    SpEuler,
    #[serde(rename = "sp-midpoint")]
    SpMidpoint,
    #[serde(rename = "pc-beta1")]
    PcBeta1,
    #[serde(rename = "pc-beta0.5")]
    PcBetaHalf,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::SpEuler, Method::SpMidpoint, Method::PcBeta1, Method::PcBetaHalf];

    pub fn name(self) -> &'static str {
        match self {
            Method::SpEuler => "sp-euler",
            Method::SpMidpoint => "sp-midpoint",
            Method::PcBeta1 => "pc-beta1",
            Method::PcBetaHalf => "pc-beta0.5",
        }
    }

    pub fn is_structure_preserving(self) -> bool {
        matches!(self, Method::SpEuler | Method::SpMidpoint)
    }

    pub fn order(self) -> usize {
        match self {
            Method::SpEuler | Method::PcBeta1 => 1,
            Method::SpMidpoint | Method::PcBetaHalf => 2,
        }
    }

    /// Builds an integrator for `stage` starting from `state`.
    pub fn build(self, stage: &StageSystem, state: &FullState, newton: &NewtonSettings) -> Result<Box<dyn Integrator>, ModelError> {
        Ok(match self {
            Method::SpEuler => Box::new(SpIntegrator::new(stage, state, RkTableau::implicit_euler(), newton.clone())?),
            Method::SpMidpoint => Box::new(SpIntegrator::new(stage, state, RkTableau::implicit_midpoint(), newton.clone())?),
            Method::PcBeta1 => Box::new(PcIntegrator::new(stage, state, 1.0)),
            Method::PcBetaHalf => Box::new(PcIntegrator::new(stage, state, 0.5)),
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method '{s}' (expected one of sp-euler, sp-midpoint, pc-beta1, pc-beta0.5)"))
    }
}

/// Cheap per-step diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub t: f64,
    pub rotor_angle: f64,
    pub rotor_speed: f64,
    pub torque_em: f64,
    pub node1_voltage: (f64, f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepReport {
    pub newton_iterations: usize,
    pub newton_residual: f64,
    pub dirac: Option<DiracCheck>,
}

pub trait Integrator: Send {
    fn time(&self) -> f64;
    /// Overwrites the time coordinate; used to keep the clock on the grid.
    fn set_time(&mut self, t: f64);
    fn step(&mut self, h: f64) -> Result<StepReport, StepError>;
    fn probe(&self) -> Probe;
    fn full_state(&self) -> FullState;
    fn stage(&self) -> &StageSystem;
}

/// Structure-preserving RK on the reduced port-Hamiltonian system.
pub struct SpIntegrator {
    pub sys: PhSystem,
    pub tableau: RkTableau,
    pub newton: NewtonSettings,
    pub check_dirac: bool,
    x: DVector<f64>,
    warm: Option<Vec<DVector<f64>>>,
    node1: Option<usize>,
}

impl SpIntegrator {
    pub fn new(stage: &StageSystem, state: &FullState, tableau: RkTableau, newton: NewtonSettings) -> Result<Self, ModelError> {
        let sys = PhSystem::new(reduce(stage)?);
        let x = sys.pack(state);
        let node1 = stage.local_index(0).and_then(|a| sys.red.partition.local2.iter().position(|&k| k == a));
        Ok(Self {
            sys,
            tableau,
            newton,
            check_dirac: true,
            x,
            warm: None,
            node1,
        })
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }
}

impl Integrator for SpIntegrator {
    fn time(&self) -> f64 {
        self.x[self.sys.layout.time()]
    }

    fn set_time(&mut self, t: f64) {
        let c = self.sys.layout.time();
        self.x[c] = t;
    }

    fn step(&mut self, h: f64) -> Result<StepReport, StepError> {
        let out = rk_step(&self.sys, &self.x, h, &self.tableau, &self.newton, self.warm.as_deref())?;
        let dirac = self
            .check_dirac
            .then(|| dirac_check(&self.sys, &self.x, h, &self.tableau, &out.stages, self.newton.tol_rel));
        if out.x_next.iter().any(|v| !v.is_finite()) {
            return Err(StepError::NonFinite { t: self.time() });
        }
        self.x = out.x_next;
        self.warm = Some(out.stages);
        Ok(StepReport {
            newton_iterations: out.iterations,
            newton_residual: out.residual,
            dirac,
        })
    }

    fn probe(&self) -> Probe {
        let l = self.sys.layout;
        let x = &self.x;
        let rotor_angle = x[l.rotor()];
        let psi = x.rows(l.psi(), l.p).into_owned();
        let node1_voltage = match self.node1 {
            Some(a) => (x[l.v() + a], x[l.v() + a + 1]),
            None => self.full_state().node1_voltage(&self.sys.red.stage),
        };
        Probe {
            t: x[l.time()],
            rotor_angle,
            rotor_speed: x[l.omega() + ROTOR_MASS],
            torque_em: self.sys.red.torque_em(&psi, rotor_angle),
            node1_voltage,
        }
    }

    fn full_state(&self) -> FullState {
        self.sys.unpack(&self.x)
    }

    fn stage(&self) -> &StageSystem {
        &self.sys.red.stage
    }
}

/// Predictor–corrector baseline on the Λ₀-removed, unreduced system.
pub struct PcIntegrator {
    pub stage: StageSystem,
    pub beta: f64,
    state: PcState,
}

impl PcIntegrator {
    pub fn new(stage: &StageSystem, state: &FullState, beta: f64) -> Self {
        let d = stage.dim();
        let mut x_e = DVector::zeros(2 * d);
        x_e.rows_mut(0, d).copy_from(&state.psi_dot);
        x_e.rows_mut(d, d).copy_from(&state.psi);
        let mut x_m = DVector::zeros(2 * MASS_COUNT);
        x_m.rows_mut(0, MASS_COUNT).copy_from(&state.theta_dot);
        x_m.rows_mut(MASS_COUNT, MASS_COUNT).copy_from(&state.theta);
        Self {
            stage: stage.clone(),
            beta,
            state: PcState { x_e, x_m, t: state.t },
        }
    }
}

impl Integrator for PcIntegrator {
    fn time(&self) -> f64 {
        self.state.t
    }

    fn set_time(&mut self, t: f64) {
        self.state.t = t;
    }

    fn step(&mut self, h: f64) -> Result<StepReport, StepError> {
        self.state = pc_step(&self.stage, &self.state, h, self.beta)?;
        Ok(StepReport::default())
    }

    fn probe(&self) -> Probe {
        let d = self.stage.dim();
        let s = &self.state;
        let rotor_angle = s.x_m[MASS_COUNT + ROTOR_MASS];
        let a = self.stage.local_index(0).expect("node 1 is never removed");
        let psi = s.x_e.rows(d, d).into_owned();
        Probe {
            t: s.t,
            rotor_angle,
            rotor_speed: s.x_m[ROTOR_MASS],
            torque_em: self.stage.torque_em(&psi, rotor_angle),
            node1_voltage: (s.x_e[a], s.x_e[a + 1]),
        }
    }

    fn full_state(&self) -> FullState {
        let d = self.stage.dim();
        let s = &self.state;
        FullState {
            t: s.t,
            psi_dot: s.x_e.rows(0, d).into_owned(),
            psi: s.x_e.rows(d, d).into_owned(),
            theta_dot: s.x_m.rows(0, MASS_COUNT).into_owned(),
            theta: s.x_m.rows(MASS_COUNT, MASS_COUNT).into_owned(),
        }
    }

    fn stage(&self) -> &StageSystem {
        &self.stage
    }
}

/// Solver statistics accumulated over one or more integration segments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct IntegrationStats {
    pub steps: usize,
    pub newton_iterations: usize,
    pub newton_iterations_max: usize,
    pub newton_residual_max: f64,
    /// Worst Dirac residual (by residual/bound ratio) over checked steps.
    pub dirac_max: DiracCheck,
    pub dirac_checked: usize,
    pub dirac_violations: usize,
}

impl IntegrationStats {
    fn record(&mut self, r: &StepReport) {
        self.steps += 1;
        self.newton_iterations += r.newton_iterations;
        self.newton_iterations_max = self.newton_iterations_max.max(r.newton_iterations);
        self.newton_residual_max = self.newton_residual_max.max(r.newton_residual);
        if let Some(d) = r.dirac {
            self.dirac_checked += 1;
            if !d.ok() {
                self.dirac_violations += 1;
            }
            if d.ratio() > self.dirac_max.ratio() {
                self.dirac_max = d;
            }
        }
    }

    pub fn mean_newton_iterations(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.newton_iterations as f64 / self.steps as f64
        }
    }
}

/// One observer callback: every step gets a probe; decimated steps also
/// carry the full lifted state.
pub struct Sample<'a> {
    /// Global step counter (continues across segments).
    pub step: usize,
    pub probe: Probe,
    pub full: Option<FullState>,
    pub report: Option<&'a StepReport>,
    pub stage: &'a StageSystem,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Outcome of a segment that did not fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Finish {
    Reached,
    Stopped,
}

/// Runs fixed steps of size `h` from the integrator's current time up to
/// `t_end` (rounded to the grid). The initial point is emitted first.
/// On failure the integrator keeps the last good state.
pub fn integrate(integ: &mut dyn Integrator, h: f64, t_end: f64, decimation: usize, stats: &mut IntegrationStats, observer: &mut dyn FnMut(&Sample) -> Control) -> Result<Finish, StepError> {
    let decimation = decimation.max(1);
    let t0 = integ.time();
    let n = if t_end > t0 { ((t_end - t0) / h).round() as usize } else { 0 };
    let initial = Sample {
        step: stats.steps,
        probe: integ.probe(),
        full: Some(integ.full_state()),
        report: None,
        stage: integ.stage(),
    };
    if observer(&initial) == Control::Stop {
        return Ok(Finish::Stopped);
    }
    for i in 0..n {
        let report = integ.step(h).map_err(|e| {
            log::warn!("step failure: {e}");
            e
        })?;
        integ.set_time(t0 + (i + 1) as f64 * h);
        stats.record(&report);
        let emit = stats.steps % decimation == 0;
        let sample = Sample {
            step: stats.steps,
            probe: integ.probe(),
            full: emit.then(|| integ.full_state()),
            report: Some(&report),
            stage: integ.stage(),
        };
        if observer(&sample) == Control::Stop {
            return Ok(Finish::Stopped);
        }
    }
    Ok(Finish::Reached)
}
