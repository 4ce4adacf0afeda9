//! Configuration, orchestration and result files behind the `ftsim` binary.

pub mod config;
pub mod report;

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use ftsim_core::equilibrium::{EquilibriumPoint, XYSystem};
use ftsim_core::integrators::Method;
use ftsim_core::model::FaultModel;
use ftsim_core::reduction::reduce;
use ftsim_core::scenario::{DiagnosticsRow, Scenario, ScenarioOutcome};
use ftsim_core::ScenarioError;

use config::RunConfig;
use report::{write_json, write_probe_log, SimulationSummary, TrajectoryCsv};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("integration failure: {0}")]
    Step(String),
    #[error("bracketing failure: {0}")]
    Bracket(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Io(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Step(_) => 3,
            CliError::Bracket(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Model(_) | ScenarioError::Config(_) => CliError::Parse(e.to_string()),
            ScenarioError::Equilibrium(_) => CliError::Solver(e.to_string()),
            ScenarioError::NotBracketing { .. } | ScenarioError::Inconclusive { .. } => CliError::Bracket(e.to_string()),
        }
    }
}

fn io<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Io(e.to_string())
}

#[derive(Debug, Serialize)]
pub struct EquilibriumReport {
    pub stage: usize,
    pub labels: Vec<String>,
    pub xy: XyPoint,
    pub alpha_beta: AlphaBetaPoint,
    pub power_angle_deg: f64,
    pub rotor_angle_deg: f64,
    pub torque_em: f64,
    pub residual_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Serialize)]
pub struct XyPoint {
    pub phi: Vec<f64>,
    pub delta: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct AlphaBetaPoint {
    pub t: f64,
    pub psi_dot: Vec<f64>,
    pub psi: Vec<f64>,
    pub theta_dot: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Residual bound for an accepted equilibrium.
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

pub fn equilibrium_report(model: &FaultModel, stage_no: usize) -> Result<(EquilibriumReport, EquilibriumPoint), CliError> {
    if !(1..=model.stages.len()).contains(&stage_no) {
        return Err(CliError::Parse(format!("stage must be between 1 and {}", model.stages.len())));
    }
    let stage = model.stage(stage_no - 1).map_err(|e| CliError::Parse(e.to_string()))?;
    let xy = XYSystem::new(&stage);
    let eq = xy
        .solve_with_fallback(&ftsim_core::equilibrium::default_delta_guess())
        .map_err(|e| CliError::Solver(e.to_string()))?;
    let ab = eq.alpha_beta_state(&stage, 0.0);
    let report = EquilibriumReport {
        stage: stage_no,
        labels: stage.labels(),
        xy: XyPoint {
            phi: eq.phi.as_slice().to_vec(),
            delta: eq.delta.as_slice().to_vec(),
        },
        alpha_beta: AlphaBetaPoint {
            t: 0.0,
            psi_dot: ab.psi_dot.as_slice().to_vec(),
            psi: ab.psi.as_slice().to_vec(),
            theta_dot: ab.theta_dot.as_slice().to_vec(),
            theta: ab.theta.as_slice().to_vec(),
        },
        power_angle_deg: eq.power_angle_deg(&stage),
        rotor_angle_deg: eq.rotor_angle_deg(),
        torque_em: eq.torque_em(&stage),
        residual_norm: eq.residual_norm,
        iterations: eq.iterations,
    };
    Ok((report, eq))
}

fn write_equilibrium_csv(path: &Path, r: &EquilibriumReport) -> Result<(), CliError> {
    let mut w = report::csv_create(path)?;
    w.write_record(["index", "label", "phi", "psi_dot", "psi"])?;
    let f = |x: f64| format!("{x:.16e}");
    for (i, label) in r.labels.iter().enumerate() {
        w.write_record([i.to_string(), label.clone(), f(r.xy.phi[i]), f(r.alpha_beta.psi_dot[i]), f(r.alpha_beta.psi[i])])?;
    }
    w.write_record(["index", "label", "delta", "theta_dot", "theta"])?;
    for i in 0..r.xy.delta.len() {
        w.write_record([i.to_string(), format!("mass_{}", i + 1), f(r.xy.delta[i]), f(r.alpha_beta.theta_dot[i]), f(r.alpha_beta.theta[i])])?;
    }
    w.flush()?;
    Ok(())
}

pub fn dump_reduction(model: &FaultModel, dir: &Path) -> Result<Vec<std::path::PathBuf>, CliError> {
    let mut files = Vec::new();
    for i in 0..model.stages.len() {
        let stage = model.stage(i).map_err(|e| CliError::Parse(e.to_string()))?;
        let red = reduce(&stage).map_err(|e| CliError::Solver(e.to_string()))?;
        files.extend(red.dump_csv(dir, &format!("stage{}", i + 1))?);
    }
    Ok(files)
}

/// `equilibrium`: solve one stage, print JSON, optionally write CSV.
pub fn cmd_equilibrium(cfg: &RunConfig, stage_no: usize, csv_dir: Option<&Path>, dump: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let model = cfg.model.resolve()?;
    let (report, eq) = equilibrium_report(&model, stage_no)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report).map_err(io)?)?;
    if let Some(dir) = csv_dir {
        write_equilibrium_csv(&dir.join(format!("equilibrium_stage{stage_no}.csv")), &report)?;
        if dump {
            dump_reduction(&model, &dir.join("reduction"))?;
        }
    }
    if eq.residual_norm > EQUILIBRIUM_TOL {
        return Err(CliError::Solver(format!("equilibrium residual {:.3e} above {EQUILIBRIUM_TOL:.0e}", eq.residual_norm)));
    }
    Ok(())
}

/// Runs one scenario, streaming rows to `<dir>/<name>.csv`, and writes the
/// JSON summary next to it.
fn simulate_into(scenario: &Scenario, cfg: &RunConfig, name: &str, rows: Option<&mut Vec<DiagnosticsRow>>) -> Result<(ScenarioOutcome, usize), CliError> {
    let dir = &cfg.output.dir;
    let mut csv = if cfg.output.csv {
        Some(TrajectoryCsv::create(&dir.join(format!("{name}.csv")), scenario.model.stages[0].n)?)
    } else {
        None
    };
    let mut write_err: Option<CliError> = None;
    let mut store = rows;
    let mut count = 0usize;
    let outcome = scenario.run(&cfg.scenario, cfg.output.decimation, &mut |r| {
        count += 1;
        if let Some(c) = csv.as_mut() {
            if let Err(e) = c.push(r) {
                write_err.get_or_insert(e);
            }
        }
        if let Some(s) = store.as_deref_mut() {
            s.push(r.clone());
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    if let Some(c) = csv {
        c.finish()?;
    }
    if cfg.output.json {
        let summary = SimulationSummary::new(cfg, &outcome, count);
        let file = if name == "trajectory" { "summary.json".to_string() } else { format!("summary_{name}.json") };
        write_json(&dir.join(file), &summary)?;
    }
    Ok((outcome, count))
}

fn step_failure(outcome: &ScenarioOutcome) -> Result<(), CliError> {
    match &outcome.failure {
        Some(msg) => Err(CliError::Step(format!("{msg} (partial outputs kept, verdict {})", outcome.verdict))),
        None => Ok(()),
    }
}

/// `simulate`: three-stage run with trajectory CSV and JSON summary.
pub fn cmd_simulate(cfg: &RunConfig, dump: bool, out: &mut dyn Write) -> Result<ScenarioOutcome, CliError> {
    let model = cfg.model.resolve()?;
    if dump {
        dump_reduction(&model, &cfg.output.dir.join("reduction"))?;
    }
    let scenario = Scenario::new(model)?;
    let (outcome, rows) = simulate_into(&scenario, cfg, "trajectory", None)?;
    writeln!(
        out,
        "verdict: {} (method {}, t_break {:.4} s, reached t = {:.4} s, {} rows, max Dirac residual {:.3e}, window |dw| {:.4e} rad/s, window angle {:.4} deg)",
        outcome.verdict,
        outcome.method,
        outcome.grid.n_break as f64 * outcome.grid.h,
        outcome.t_reached,
        rows,
        outcome.stats.dirac_max.residual,
        outcome.window.mean_abs_delta_omega,
        outcome.window.mean_power_angle_deg
    )?;
    step_failure(&outcome)?;
    Ok(outcome)
}

/// `cct`: bisection on the break time.
pub fn cmd_cct(cfg: &RunConfig, out: &mut dyn Write) -> Result<ftsim_core::scenario::CctResult, CliError> {
    let scenario = Scenario::new(cfg.model.resolve()?)?;
    let c = &cfg.cct;
    let res = scenario.find_cct(&cfg.scenario, c.lo, c.hi, c.tol, c.jobs.max(1))?;
    #[derive(Serialize)]
    struct CctReport<'a> {
        stable: f64,
        unstable: f64,
        width: f64,
        probes: &'a [ftsim_core::scenario::ProbeRecord],
    }
    let rep = CctReport {
        stable: res.stable,
        unstable: res.unstable,
        width: res.width(),
        probes: &res.probes,
    };
    writeln!(out, "{}", serde_json::to_string_pretty(&rep).map_err(io)?)?;
    if cfg.output.json {
        write_json(&cfg.output.dir.join("cct.json"), &rep)?;
    }
    if cfg.output.csv {
        write_probe_log(&cfg.output.dir.join("probes.csv"), &res)?;
    }
    Ok(res)
}

/// Relative difference of fluxes and angles between two rows.
pub fn row_error(a: &DiagnosticsRow, b: &DiagnosticsRow) -> f64 {
    let rel = |x: &[f64], y: &[f64]| {
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        x.iter().zip(y).fold(0.0f64, |m, (p, q)| m.max((p - q).abs())) / scale
    };
    rel(&a.psi, &b.psi).max(rel(&a.theta, &b.theta))
}

/// `compare`: the same scenario with two methods, paired on the output grid.
pub fn cmd_compare(cfg: &RunConfig, other: Method, out: &mut dyn Write) -> Result<(), CliError> {
    let scenario = Scenario::new(cfg.model.resolve()?)?;
    let first = cfg.scenario.method;
    let mut runs = Vec::new();
    for m in [first, other] {
        let mut c = cfg.clone();
        c.scenario.method = m;
        let mut rows = Vec::new();
        let (outcome, _) = simulate_into(&scenario, &c, &format!("trajectory_{}", m.name()), Some(&mut rows))?;
        runs.push((m, outcome, rows));
    }
    let (ra, rb) = (&runs[0].2, &runs[1].2);
    let (na, nb) = (first.name(), other.name());
    let mut w = report::csv_create(&cfg.output.dir.join("compare.csv"))?;
    w.write_record(vec![
        "t".to_string(),
        "stage".to_string(),
        format!("delta_omega_{na}"),
        format!("delta_omega_{nb}"),
        format!("power_angle_deg_{na}"),
        format!("power_angle_deg_{nb}"),
        "error_norm".to_string(),
    ])?;
    let f = |x: f64| format!("{x:.16e}");
    let mut worst = 0.0f64;
    for (a, b) in ra.iter().zip(rb).take_while(|(a, b)| a.t == b.t && a.stage == b.stage) {
        let e = row_error(a, b);
        worst = worst.max(e);
        w.write_record([f(a.t), a.stage.to_string(), f(a.delta_omega), f(b.delta_omega), f(a.power_angle_deg), f(b.power_angle_deg), f(e)])?;
    }
    w.flush()?;
    for (m, o, _) in &runs {
        writeln!(out, "{}: verdict {}, reached t = {:.4} s", m, o.verdict, o.t_reached)?;
    }
    writeln!(out, "max error_norm: {worst:.6e}")?;
    for (_, o, _) in &runs {
        step_failure(o)?;
    }
    Ok(())
}
