//! Python bindings: scenarios, the full estimation pipeline, sweeps,
//! observability reports and a few numerical building blocks.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mixtraffic::harness::{self, output, HarnessError};
use mixtraffic::highway::{self, MetanetParams};
use mixtraffic::OfframpMode;

fn to_py(err: HarnessError) -> PyErr {
    match err {
        HarnessError::Io(_) => PyIOError::new_err(err.to_json().to_string()),
        _ => PyValueError::new_err(err.to_json().to_string()),
    }
}

fn parse_mode(mode: &str) -> PyResult<OfframpMode> {
    mode.parse::<OfframpMode>()
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Experiment description: geometry, model parameters, ramps, demand,
/// noise and filter tuning.
#[pyclass(name = "Scenario", module = "pymixtraffic", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: harness::Scenario,
}

#[pymethods]
impl PyScenario {
    /// The built-in three-hour, 20-segment experiment.
    #[staticmethod]
    fn default() -> Self {
        Self {
            inner: harness::Scenario::default(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        harness::Scenario::from_toml_str(text)
            .map(|inner| Self { inner })
            .map_err(|e| to_py(HarnessError::Parse(e.to_string())))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        harness::Scenario::load(&path)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    /// Copy with every noise source switched off.
    fn noise_free(&self) -> Self {
        Self {
            inner: self.inner.noise_free(),
        }
    }

    /// List of `(path, message)` problems; empty when the scenario is valid.
    fn validate(&self) -> Vec<(String, String)> {
        match self.inner.validate() {
            Ok(()) => Vec::new(),
            Err(e) => e.issues.into_iter().map(|i| (i.path, i.message)).collect(),
        }
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn horizon_h(&self) -> f64 {
        self.inner.horizon_h
    }

    #[setter]
    fn set_horizon_h(&mut self, hours: f64) {
        self.inner.horizon_h = hours;
    }

    #[getter]
    fn offramp_mode(&self) -> String {
        self.inner.offramp_mode.to_string()
    }

    #[setter]
    fn set_offramp_mode(&mut self, mode: &str) -> PyResult<()> {
        self.inner.offramp_mode = parse_mode(mode)?;
        Ok(())
    }

    #[getter]
    fn q_scale(&self) -> f64 {
        self.inner.filter.q_scale
    }

    #[setter]
    fn set_q_scale(&mut self, sigma: f64) {
        self.inner.filter.q_scale = sigma;
    }

    #[getter]
    fn exact_init(&self) -> bool {
        self.inner.filter.exact_init
    }

    #[setter]
    fn set_exact_init(&mut self, exact: bool) {
        self.inner.filter.exact_init = exact;
    }

    #[getter]
    fn n_segments(&self) -> usize {
        self.inner.geometry.n_segments
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.inner.n_steps()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, seed={}, horizon_h={}, offramp_mode={:?}, n_segments={})",
            self.inner.name,
            self.inner.seed,
            self.inner.horizon_h,
            self.inner.offramp_mode.to_string(),
            self.inner.geometry.n_segments
        )
    }
}

/// Ground truth, estimates and metrics of one run. Series are indexed
/// `[step][segment]` with `n_steps + 1` steps.
#[pyclass(name = "RunResult", module = "pymixtraffic", frozen)]
struct PyRunResult {
    inner: harness::RunResult,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn p_r(&self) -> f64 {
        self.inner.metrics.p_r
    }

    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = &self.inner.metrics;
        let d = PyDict::new(py);
        d.set_item("p_r", m.p_r)?;
        d.set_item("g_clamps", m.g_clamps)?;
        d.set_item("output_holds", m.output_holds)?;
        d.set_item("sim_clamps", m.sim_clamps)?;
        d.set_item("min_cov_eigenvalue", m.min_cov_eigenvalue)?;
        d.set_item("runtime_s", m.runtime_s)?;
        Ok(d)
    }

    #[getter]
    fn rho(&self) -> Vec<Vec<f64>> {
        self.inner
            .truth
            .states
            .iter()
            .map(|s| s.rho.clone())
            .collect()
    }

    #[getter]
    fn rho_a(&self) -> Vec<Vec<f64>> {
        self.inner
            .truth
            .states
            .iter()
            .map(|s| s.rho_a.clone())
            .collect()
    }

    #[getter]
    fn v(&self) -> Vec<Vec<f64>> {
        self.inner
            .truth
            .states
            .iter()
            .map(|s| s.v.clone())
            .collect()
    }

    #[getter]
    fn rho_hat(&self) -> Vec<Vec<f64>> {
        self.inner.estimates.rho_hat.clone()
    }

    /// Estimated inverse connected share per step and segment.
    #[getter]
    fn p_bar_hat(&self) -> Vec<Vec<f64>> {
        self.inner.estimates.x_hat.clone()
    }

    /// True inverse connected share `ρ / ρ^a`.
    #[getter]
    fn p_bar(&self) -> Vec<Vec<f64>> {
        (0..self.inner.truth.states.len())
            .map(|k| self.inner.truth.inverse_penetration(k))
            .collect()
    }

    #[getter]
    fn innovation(&self) -> Vec<f64> {
        self.inner.estimates.innovation.clone()
    }

    /// Writes `trajectory.csv` and `metrics.csv` into `directory`.
    fn write_csv(&self, directory: PathBuf) -> PyResult<()> {
        let write = || -> Result<(), HarnessError> {
            std::fs::create_dir_all(&directory)?;
            let traj = std::fs::File::create(directory.join("trajectory.csv"))?;
            output::write_rows(traj, &output::trajectory_rows(&self.inner))?;
            output::write_metrics(
                std::fs::File::create(directory.join("metrics.csv"))?,
                &self.inner.metrics,
            )
        };
        write().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "RunResult(p_r={:.6}, steps={})",
            self.inner.metrics.p_r,
            self.inner.truth.n_steps()
        )
    }
}

/// Simulate, estimate and score one scenario.
#[pyfunction]
fn run_experiment(py: Python<'_>, scenario: PyScenario) -> PyResult<PyRunResult> {
    py.detach(|| harness::run_experiment(&scenario.inner))
        .map(|inner| PyRunResult { inner })
        .map_err(to_py)
}

/// `P_R` for each `Q = σ I`, on one shared truth run. Returns `(σ, P_R)` pairs.
#[pyfunction]
fn q_sweep(py: Python<'_>, scenario: PyScenario, sigmas: Vec<f64>) -> PyResult<Vec<(f64, f64)>> {
    py.detach(|| harness::q_sweep(&scenario.inner, &sigmas))
        .map(|points| points.into_iter().map(|p| (p.sigma, p.p_r)).collect())
        .map_err(to_py)
}

/// Observability along the scenario's truth run. One dict per window start.
#[pyfunction]
fn observability<'py>(py: Python<'py>, scenario: PyScenario) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let rows = py
        .detach(|| {
            let truth = harness::generate_truth(&scenario.inner)?;
            harness::observability_over_run(&scenario.inner, &truth)
        })
        .map_err(to_py)?;
    rows.into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("k0", r.k0)?;
            d.set_item("observable", r.observable)?;
            d.set_item("min_abs_anti_diagonal", r.min_abs_anti_diagonal)?;
            d.set_item("log10_abs_det", r.log10_abs_det)?;
            Ok(d)
        })
        .collect()
}

/// Stationary speed `V(ρ)` in km/h.
#[pyfunction]
#[pyo3(signature = (rho, v_free=None, rho_crit=None, alpha_exp=None))]
fn nominal_speed(
    rho: f64,
    v_free: Option<f64>,
    rho_crit: Option<f64>,
    alpha_exp: Option<f64>,
) -> PyResult<f64> {
    let d = MetanetParams::default();
    let params = MetanetParams {
        v_free: v_free.unwrap_or(d.v_free),
        rho_crit: rho_crit.unwrap_or(d.rho_crit),
        alpha_exp: alpha_exp.unwrap_or(d.alpha_exp),
        ..d
    };
    highway::nominal_speed(rho, &params).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Relative RMS density error of `ρ̂ = ρ^a p̄̂`, normalized by mean density.
#[pyfunction]
fn performance_index(
    rho: Vec<Vec<f64>>,
    rho_a: Vec<Vec<f64>>,
    p_bar_hat: Vec<Vec<f64>>,
) -> PyResult<f64> {
    harness::performance_index(&rho, &rho_a, &p_bar_hat).map_err(to_py)
}

#[pymodule]
fn pymixtraffic(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(q_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(observability, m)?)?;
    m.add_function(wrap_pyfunction!(nominal_speed, m)?)?;
    m.add_function(wrap_pyfunction!(performance_index, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names() {
        assert_eq!(parse_mode("measured").unwrap(), OfframpMode::Measured);
        assert_eq!(parse_mode("unmeasured").unwrap(), OfframpMode::Unmeasured);
    }
}
