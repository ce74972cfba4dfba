//! Python bindings. Reports cross the boundary as plain dicts decoded from
//! their JSON form.

use ehm_fdi::harness::experiment::{analyze_record, run_replicate, sensitivity_analysis};
use ehm_fdi::harness::report::summary_table;
use ehm_fdi::harness::{run_monte_carlo, simulate_plant, Config, FaultSpec, McSummary, Prepared};
use ehm_fdi::fdi::RunMetadata;
use ehm_fdi::ukf::{ukf_run, EhmModel};
use ehm_fdi::{FdiError, Param};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

create_exception!(ehm_fdi, FdiException, PyException, "Raised by the model, filter or test layers.");
create_exception!(ehm_fdi, ConfigError, FdiException, "Invalid or inconsistent configuration.");

fn to_py(e: FdiError) -> PyErr {
    match e.root() {
        FdiError::Config(_) | FdiError::Parse { .. } | FdiError::Io { .. } => ConfigError::new_err(e.to_string()),
        _ => FdiException::new_err(e.to_string()),
    }
}

fn to_dict<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Experiment configuration. Every field has a default; load TOML with
/// `Config.from_toml` or `Config.load`.
#[pyclass(name = "Config", module = "ehm_fdi")]
#[derive(Clone)]
struct PyConfig {
    inner: Config,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        PyConfig { inner: Config::default() }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner = Config::from_toml_str(text).map_err(to_py)?;
        inner.validate().map_err(to_py)?;
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(PyConfig {
            inner: Config::load(&path).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(to_py)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    /// Nominal capacity [Ah].
    fn capacity_ah(&self) -> f64 {
        self.inner.capacity_ah()
    }

    /// Parameter vector `{eps_s_neg, R_f, g_s, n_Li}`.
    #[getter]
    fn theta(&self) -> [f64; 4] {
        Param::ALL.map(|p| self.inner.theta.get(p))
    }

    fn set_theta(&mut self, name: &str, value: f64) -> PyResult<()> {
        let p: Param = name.parse().map_err(to_py)?;
        self.inner.theta.set(p, value);
        Ok(())
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.experiment.n
    }

    #[setter]
    fn set_n(&mut self, value: usize) {
        self.inner.experiment.n = value;
    }

    #[getter]
    fn discard(&self) -> usize {
        self.inner.experiment.discard
    }

    #[setter]
    fn set_discard(&mut self, value: usize) {
        self.inner.experiment.discard = value;
    }

    #[getter]
    fn n_runs(&self) -> usize {
        self.inner.experiment.n_runs
    }

    #[setter]
    fn set_n_runs(&mut self, value: usize) {
        self.inner.experiment.n_runs = value;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.experiment.seed
    }

    #[setter]
    fn set_seed(&mut self, value: u64) {
        self.inner.experiment.seed = value;
    }

    #[getter]
    fn n_i(&self) -> usize {
        self.inner.experiment.n_i
    }

    #[setter]
    fn set_n_i(&mut self, value: usize) {
        self.inner.experiment.n_i = value;
    }

    #[getter]
    fn noise_var(&self) -> f64 {
        self.inner.experiment.noise_var
    }

    #[setter]
    fn set_noise_var(&mut self, value: f64) {
        self.inner.experiment.noise_var = value;
    }

    #[getter]
    fn alpha_fa(&self) -> f64 {
        self.inner.experiment.alpha_fa
    }

    #[setter]
    fn set_alpha_fa(&mut self, value: f64) {
        self.inner.experiment.alpha_fa = value;
    }

    fn __repr__(&self) -> String {
        let e = &self.inner.experiment;
        format!(
            "Config(n={}, n_runs={}, seed={}, n_i={}, alpha_fa={}, fault={})",
            e.n,
            e.n_runs,
            e.seed,
            e.n_i,
            e.alpha_fa,
            self.inner.fault.label()
        )
    }
}

/// Plant fault present over the whole record.
#[pyclass(name = "Fault", module = "ehm_fdi", frozen)]
#[derive(Clone, Copy)]
struct PyFault {
    inner: FaultSpec,
}

#[pymethods]
impl PyFault {
    #[staticmethod]
    fn none() -> Self {
        PyFault { inner: FaultSpec::None }
    }

    /// `θ_target ← θ_target (1 + delta_rel)`; target is one of
    /// `eps_s_neg`, `R_f`, `g_s`, `n_Li`.
    #[staticmethod]
    fn param(target: &str, delta_rel: f64) -> PyResult<Self> {
        let inner = FaultSpec::ParamRelative {
            target: target.parse().map_err(to_py)?,
            delta_rel,
        };
        inner.validate().map_err(to_py)?;
        Ok(PyFault { inner })
    }

    #[staticmethod]
    fn side_reaction(j_sr0: f64) -> PyResult<Self> {
        let inner = FaultSpec::SideReaction { j_sr0 };
        inner.validate().map_err(to_py)?;
        Ok(PyFault { inner })
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label()
    }

    fn __repr__(&self) -> String {
        format!("Fault({})", self.inner.label())
    }
}

fn prepared(config: &PyConfig) -> PyResult<Prepared> {
    Prepared::new(config.inner.clone()).map_err(to_py)
}

fn fault_or_configured(config: &PyConfig, fault: Option<PyFault>) -> FaultSpec {
    fault.map_or(config.inner.fault, |f| f.inner)
}

/// Noise-free plant record: dict of `current_density`, `soc`, `c_ss_bar`,
/// `voltage`, `side_current` lists and `q_loss`.
#[pyfunction]
#[pyo3(signature = (config, fault=None))]
fn simulate(py: Python<'_>, config: &PyConfig, fault: Option<PyFault>) -> PyResult<PyObject> {
    let prep = prepared(config)?;
    let fault = fault_or_configured(config, fault);
    let plant = py.allow_threads(|| simulate_plant(&prep, &fault)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("current_density", prep.currents.clone())?;
    out.set_item("soc", plant.states.iter().map(|s| s.soc).collect::<Vec<_>>())?;
    out.set_item("c_ss_bar", plant.states.iter().map(|s| s.c_ss_bar).collect::<Vec<_>>())?;
    out.set_item("voltage", plant.voltage)?;
    out.set_item("side_current", plant.side_current)?;
    out.set_item("q_loss", plant.q_loss)?;
    Ok(out.into_any().unbind())
}

/// Identifiability along the configured cycle: `d`, `c`, `relative_norms`,
/// `ranking`, `soc_range`.
#[pyfunction]
fn sensitivity(py: Python<'_>, config: &PyConfig) -> PyResult<PyObject> {
    let prep = prepared(config)?;
    let sa = py.allow_threads(|| sensitivity_analysis(&prep)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("d", sa.report.norms())?;
    let c: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| sa.report.c[(i, j)]).collect()).collect();
    out.set_item("c", c)?;
    out.set_item("relative_norms", sa.relative_norms)?;
    out.set_item("ranking", sa.report.ranking().map(Param::name).to_vec())?;
    out.set_item("soc_range", sa.soc_range)?;
    Ok(out.into_any().unbind())
}

/// One noisy replicate: the full report (global χ², min-max statistics,
/// flags, ζ, Σ, M, metadata).
#[pyfunction]
#[pyo3(signature = (config, fault=None, run=0))]
fn detect(py: Python<'_>, config: &PyConfig, fault: Option<PyFault>, run: usize) -> PyResult<PyObject> {
    let prep = prepared(config)?;
    let fault = fault_or_configured(config, fault);
    let report = py
        .allow_threads(|| {
            let plant = simulate_plant(&prep, &fault)?;
            run_replicate(&prep, &fault, &plant, run, false).map(|o| o.report)
        })
        .map_err(to_py)?;
    to_dict(py, &report)
}

/// Filters a measured voltage record at the nominal parameters and runs the
/// local tests on it. `current_density` defaults to the configured cycle.
#[pyfunction]
#[pyo3(signature = (config, measured, current_density=None))]
fn analyze(
    py: Python<'_>,
    config: &PyConfig,
    measured: Vec<f64>,
    current_density: Option<Vec<f64>>,
) -> PyResult<PyObject> {
    let mut prep = prepared(config)?;
    if let Some(z) = current_density {
        prep.currents = z;
    }
    let metadata = RunMetadata {
        fault: "unknown".into(),
        n: measured.len(),
        discard: config.inner.experiment.discard,
        n_i: config.inner.experiment.n_i,
        ..RunMetadata::default()
    };
    let out = py
        .allow_threads(|| analyze_record(&prep, &measured, metadata, false))
        .map_err(to_py)?;
    to_dict(py, &out.report)
}

/// UKF estimates at the nominal parameters: dict of `x_hat` (pairs),
/// `innovation`, `innovation_var`.
#[pyfunction]
fn ukf_filter(py: Python<'_>, config: &PyConfig, current_density: Vec<f64>, measured: Vec<f64>) -> PyResult<PyObject> {
    let cfg = &config.inner;
    let ocps = cfg.build_ocps().map_err(to_py)?;
    let model = EhmModel::new(cfg.theta, &cfg.cell, &ocps).map_err(to_py)?;
    let x0 = cfg.initial_state().to_vector() * (1.0 + cfg.experiment.init_state_error_rel);
    let ukf_cfg = cfg.ukf.to_config(x0, cfg.experiment.noise_var);
    let states = ukf_run(&model, &ukf_cfg, &current_density, &measured).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("x_hat", states.iter().map(|s| (s.x_hat[0], s.x_hat[1])).collect::<Vec<_>>())?;
    out.set_item("innovation", states.iter().map(|s| s.last_innovation).collect::<Vec<_>>())?;
    out.set_item("innovation_var", states.iter().map(|s| s.last_p_y).collect::<Vec<_>>())?;
    Ok(out.into_any().unbind())
}

/// Monte Carlo summary (means, rates, per-run reports and failures).
#[pyfunction]
#[pyo3(signature = (config, fault=None))]
fn monte_carlo(py: Python<'_>, config: &PyConfig, fault: Option<PyFault>) -> PyResult<PyObject> {
    let prep = prepared(config)?;
    let fault = fault_or_configured(config, fault);
    let summary = py.allow_threads(|| run_monte_carlo(&prep, &fault)).map_err(to_py)?;
    to_dict(py, &summary)
}

/// Runs every fault and returns the averaged statistics as a text table.
#[pyfunction]
fn monte_carlo_table(py: Python<'_>, config: &PyConfig, faults: Vec<PyFault>) -> PyResult<String> {
    let prep = prepared(config)?;
    let summaries = py
        .allow_threads(|| {
            faults
                .iter()
                .map(|f| run_monte_carlo(&prep, &f.inner))
                .collect::<Result<Vec<McSummary>, _>>()
        })
        .map_err(to_py)?;
    Ok(summary_table(&summaries))
}

/// `p`-quantile of the central χ² distribution with `dof` degrees of freedom.
#[pyfunction]
fn chi2_quantile(dof: u32, p: f64) -> PyResult<f64> {
    ehm_fdi::chi2::chi2_quantile(dof, p).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "ehm_fdi")]
fn ehm_fdi_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyFault>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(ukf_filter, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_table, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_quantile, m)?)?;
    m.add("FdiException", m.py().get_type::<FdiException>())?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    Ok(())
}
