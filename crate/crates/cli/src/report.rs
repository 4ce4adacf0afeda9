use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;

use ftsim_core::scenario::{csv_header, CctResult, DiagnosticsRow, ScenarioOutcome};

use crate::config::RunConfig;
use crate::CliError;

pub type CsvFile = csv::Writer<BufWriter<File>>;

pub fn csv_create(path: &Path) -> Result<CsvFile, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

/// Streams trajectory rows to a CSV file.
pub struct TrajectoryCsv {
    writer: CsvFile,
    pub rows: usize,
}

impl TrajectoryCsv {
    pub fn create(path: &Path, n_nodes: usize) -> Result<Self, CliError> {
        let mut writer = csv_create(path)?;
        writer.write_record(csv_header(n_nodes))?;
        Ok(Self { writer, rows: 0 })
    }

    pub fn push(&mut self, row: &DiagnosticsRow) -> Result<(), CliError> {
        self.writer.write_record(row.csv_fields())?;
        self.rows += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<usize, CliError> {
        self.writer.flush()?;
        Ok(self.rows)
    }
}

#[derive(Debug, Serialize)]
pub struct DiracSummary {
    pub max_residual: f64,
    pub bound_at_max: f64,
    pub checked_steps: usize,
    pub violations: usize,
}

#[derive(Debug, Serialize)]
pub struct NewtonSummary {
    pub mean_iterations: f64,
    pub max_iterations: usize,
    pub max_relative_residual: f64,
}

/// JSON summary of one simulation; `config` re-parses as a [`RunConfig`].
#[derive(Debug, Serialize)]
pub struct SimulationSummary<'a> {
    pub config: &'a RunConfig,
    pub verdict: String,
    pub max_dirac_residual: f64,
    pub dirac: DiracSummary,
    pub newton: NewtonSummary,
    pub trajectory_rows: usize,
    pub outcome: &'a ScenarioOutcome,
}

impl<'a> SimulationSummary<'a> {
    pub fn new(config: &'a RunConfig, outcome: &'a ScenarioOutcome, rows: usize) -> Self {
        let s = &outcome.stats;
        Self {
            config,
            verdict: outcome.verdict.to_string(),
            max_dirac_residual: s.dirac_max.residual,
            dirac: DiracSummary {
                max_residual: s.dirac_max.residual,
                bound_at_max: s.dirac_max.bound,
                checked_steps: s.dirac_checked,
                violations: s.dirac_violations,
            },
            newton: NewtonSummary {
                mean_iterations: s.mean_newton_iterations(),
                max_iterations: s.newton_iterations_max,
                max_relative_residual: s.newton_residual_max,
            },
            trajectory_rows: rows,
            outcome,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn write_probe_log(path: &Path, res: &CctResult) -> Result<(), CliError> {
    let mut w = csv_create(path)?;
    w.write_record(["t_break", "verdict", "endpoint", "horizon", "t_reached", "unstable_at", "window_mean_abs_delta_omega", "window_mean_power_angle_deg"])?;
    let f = |x: f64| format!("{x:.16e}");
    for p in &res.probes {
        w.write_record([
            f(p.t_break),
            p.verdict.to_string(),
            p.endpoint.to_string(),
            f(p.horizon),
            f(p.t_reached),
            p.unstable_at.map(f).unwrap_or_default(),
            f(p.window.mean_abs_delta_omega),
            f(p.window.mean_power_angle_deg),
        ])?;
    }
    w.flush()?;
    Ok(())
}
