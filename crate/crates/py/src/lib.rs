//! Python bindings: model presets, equilibria, reduced matrices, simulation
//! and critical-clearing-time search. Structured results come back as plain
//! dicts and lists.

use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

use ftsim_cli::equilibrium_report;
use ftsim_core::integrators::Method;
use ftsim_core::model::FaultModel;
use ftsim_core::reduction::{reduce, ReducedSystem};
use ftsim_core::scenario::{csv_header, DiagnosticsRow, Scenario as CoreScenario, ScenarioConfig};

create_exception!(ftsim, FtsimError, PyException);

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    FtsimError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Generator and network data for the three stages of a fault.
#[pyclass(module = "ftsim", frozen)]
struct Model {
    inner: FaultModel,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (preset = "first-benchmark"))]
    fn new(preset: &str) -> PyResult<Self> {
        FaultModel::preset(preset)
            .map(|inner| Self { inner })
            .ok_or_else(|| FtsimError::new_err(format!("unknown model preset '{preset}'")))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: FaultModel = serde_json::from_str(text).map_err(err)?;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(err)
    }

    #[getter]
    fn n_stages(&self) -> usize {
        self.inner.stages.len()
    }

    /// Component labels of the electrical state kept in `stage` (1-based).
    fn labels(&self, stage: usize) -> PyResult<Vec<String>> {
        Ok(self.stage(stage)?.labels())
    }

    /// `N(theta) = K_L + Gamma(theta)` restricted to the non-shorted components.
    fn network_matrix(&self, stage: usize, theta: f64) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows_of(&self.stage(stage)?.n_matrix(theta)))
    }

    /// Reduced matrix `N~(theta)` together with its row labels.
    fn reduced_matrix(&self, stage: usize, theta: f64) -> PyResult<(Vec<String>, Vec<Vec<f64>>)> {
        let red = self.reduced(stage)?;
        let labels = red.stage.labels();
        let names = red.partition.local2.iter().map(|&k| labels[k].clone()).collect();
        Ok((names, rows_of(&red.n_tilde.eval(theta))))
    }

    /// Solves the steady state of `stage` (1-based) and reports it in both frames.
    #[pyo3(signature = (stage = 1))]
    fn equilibrium(&self, py: Python<'_>, stage: usize) -> PyResult<Py<PyAny>> {
        let (report, _) = equilibrium_report(&self.inner, stage).map_err(err)?;
        to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        format!("Model(n_nodes={}, stages={})", self.inner.stages.first().map_or(0, |s| s.n), self.inner.stages.len())
    }
}

impl Model {
    fn stage(&self, stage: usize) -> PyResult<ftsim_core::model::StageSystem> {
        if !(1..=self.inner.stages.len()).contains(&stage) {
            return Err(FtsimError::new_err(format!("stage must be between 1 and {}", self.inner.stages.len())));
        }
        self.inner.stage(stage - 1).map_err(err)
    }

    fn reduced(&self, stage: usize) -> PyResult<ReducedSystem> {
        reduce(&self.stage(stage)?).map_err(err)
    }
}

fn scenario_config(method: &str, t_break: f64, h: f64, t_horizon: Option<f64>, stop_when_unstable: bool, config: Option<&str>) -> PyResult<ScenarioConfig> {
    let mut cfg: ScenarioConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(err)?,
        None => ScenarioConfig::default(),
    };
    cfg.method = method.parse::<Method>().map_err(err)?;
    cfg.t_break = t_break;
    cfg.h = h;
    if t_horizon.is_some() {
        cfg.t_horizon = t_horizon;
    }
    cfg.stop_when_unstable = stop_when_unstable;
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// Prepared fault scenario: stage reductions, initial state and the
/// post-fault angle target.
#[pyclass(module = "ftsim", frozen)]
struct Scenario {
    inner: CoreScenario,
}

#[pymethods]
impl Scenario {
    #[new]
    #[pyo3(signature = (model = None))]
    fn new(model: Option<&Model>) -> PyResult<Self> {
        let model = model.map_or_else(FaultModel::first_benchmark, |m| m.inner.clone());
        CoreScenario::new(model).map(|inner| Self { inner }).map_err(err)
    }

    #[getter]
    fn angle_target(&self) -> f64 {
        self.inner.angle_target
    }

    /// Runs the three stages. Returns `{"outcome", "columns", "rows"}` where
    /// each row follows `columns`.
    #[pyo3(signature = (method = "sp-midpoint", t_break = 0.5, h = 1e-4, t_horizon = None, decimation = 10, stop_when_unstable = true, config = None))]
    #[allow(clippy::too_many_arguments)]
    fn simulate(
        &self,
        py: Python<'_>,
        method: &str,
        t_break: f64,
        h: f64,
        t_horizon: Option<f64>,
        decimation: usize,
        stop_when_unstable: bool,
        config: Option<&str>,
    ) -> PyResult<Py<PyAny>> {
        let cfg = scenario_config(method, t_break, h, t_horizon, stop_when_unstable, config)?;
        if decimation == 0 {
            return Err(FtsimError::new_err("decimation must be at least 1"));
        }
        let (outcome, rows) = py.detach(|| {
            let mut rows: Vec<Vec<f64>> = Vec::new();
            let mut sink = |r: &DiagnosticsRow| rows.push(flatten(r));
            self.inner.run(&cfg, decimation, &mut sink).map(|o| (o, rows))
        })
        .map_err(err)?;
        #[derive(Serialize)]
        struct Out<'a> {
            outcome: &'a ftsim_core::scenario::ScenarioOutcome,
            columns: Vec<String>,
            rows: Vec<Vec<f64>>,
        }
        let columns = csv_header(self.inner.model.stages[0].n);
        to_py(py, &Out { outcome: &outcome, columns, rows })
    }

    /// Bisects the fault duration between a stable `lo` and an unstable `hi`.
    #[pyo3(signature = (lo = 0.5, hi = 1.0, tol = 0.01, jobs = 1, method = "sp-midpoint", h = 1e-4, t_horizon = None, config = None))]
    #[allow(clippy::too_many_arguments)]
    fn find_cct(
        &self,
        py: Python<'_>,
        lo: f64,
        hi: f64,
        tol: f64,
        jobs: usize,
        method: &str,
        h: f64,
        t_horizon: Option<f64>,
        config: Option<&str>,
    ) -> PyResult<Py<PyAny>> {
        let cfg = scenario_config(method, lo, h, t_horizon, true, config)?;
        let res = py.detach(|| self.inner.find_cct(&cfg, lo, hi, tol, jobs)).map_err(err)?;
        #[derive(Serialize)]
        struct Out<'a> {
            stable: f64,
            unstable: f64,
            width: f64,
            probes: &'a [ftsim_core::scenario::ProbeRecord],
        }
        to_py(py, &Out { stable: res.stable, unstable: res.unstable, width: res.width(), probes: &res.probes })
    }
}

fn flatten(r: &DiagnosticsRow) -> Vec<f64> {
    let mut v = vec![r.t, r.stage as f64, r.delta_omega, r.torque_em, r.power_angle_deg];
    v.extend(r.psi.iter().copied());
    v.extend(r.theta.iter().copied());
    v
}

/// Names of the available integration methods.
#[pyfunction]
fn methods() -> Vec<&'static str> {
    Method::ALL.iter().map(|m| m.name()).collect()
}

#[pymodule]
fn ftsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FtsimError", m.py().get_type::<FtsimError>())?;
    m.add_class::<Model>()?;
    m.add_class::<Scenario>()?;
    m.add_function(wrap_pyfunction!(methods, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
