//! Python bindings for the spatial averaging library.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use spatavg::moments::{CovNormalization, VarianceForm};
use spatavg::sim::SimConfig;
use spatavg::{AvailabilityModel, NoiseModel, Objective, SpatError, WeightVector};

create_exception!(spatavg_py, SpatavgError, PyValueError, "Error raised by the spatavg core.");

fn err(e: SpatError) -> PyErr {
    SpatavgError::new_err(format!("{}: {e}", e.category()))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != k) {
        return Err(err(SpatError::DimensionMismatch("ragged matrix rows".into())));
    }
    Ok(DMatrix::from_fn(n, k, |i, j| rows[i][j]))
}

fn weights(beta: Vec<f64>) -> PyResult<WeightVector> {
    WeightVector::new(beta).map_err(err)
}

fn avail(alpha: f64) -> PyResult<AvailabilityModel> {
    AvailabilityModel::new(alpha).map_err(err)
}

fn parse<T: std::str::FromStr<Err = SpatError>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn normalization(s: &str) -> PyResult<CovNormalization> {
    match s {
        "unbiased" => Ok(CovNormalization::Unbiased),
        "population" => Ok(CovNormalization::Population),
        other => Err(err(SpatError::Parse(format!("unknown normalization '{other}'")))),
    }
}

fn variance_form(s: &str) -> PyResult<VarianceForm> {
    match s {
        "compact" => Ok(VarianceForm::Compact),
        "expanded" => Ok(VarianceForm::Expanded),
        other => Err(err(SpatError::Parse(format!("unknown variance form '{other}'")))),
    }
}

/// Sites by time observations.
#[pyclass(name = "Panel", module = "spatavg_py", frozen)]
struct Panel(spatavg::ObservationPanel);

#[pymethods]
impl Panel {
    #[new]
    #[pyo3(signature = (values, location_ids=None, coords=None, time_ids=None))]
    fn new(
        values: Vec<Vec<f64>>,
        location_ids: Option<Vec<String>>,
        coords: Option<Vec<(f64, f64)>>,
        time_ids: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let m = matrix(&values)?;
        let ids = location_ids.unwrap_or_else(|| (1..=m.nrows()).map(|i| format!("s{i}")).collect());
        let times = time_ids.unwrap_or_else(|| (1..=m.ncols()).map(|t| format!("t{t}")).collect());
        spatavg::ObservationPanel::new(m, ids, coords, times).map(Self).map_err(err)
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        spatavg::io::read_panel(&path).map(Self).map_err(err)
    }

    #[getter]
    fn n_sites(&self) -> usize {
        self.0.n_sites()
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.0.n_steps()
    }

    #[getter]
    fn location_ids(&self) -> Vec<String> {
        self.0.location_ids().to_vec()
    }

    #[getter]
    fn time_ids(&self) -> Vec<String> {
        self.0.time_ids().to_vec()
    }

    fn values(&self) -> Vec<Vec<f64>> {
        rows(self.0.values())
    }

    fn __repr__(&self) -> String {
        format!("Panel(n_sites={}, n_steps={})", self.0.n_sites(), self.0.n_steps())
    }
}

/// Reference spatial average over time.
#[pyclass(name = "Truth", module = "spatavg_py", frozen)]
struct Truth(spatavg::TruthSeries);

#[pymethods]
impl Truth {
    #[new]
    fn new(values: Vec<f64>) -> PyResult<Self> {
        spatavg::TruthSeries::new(values).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, panel=None))]
    fn read(path: PathBuf, panel: Option<&Panel>) -> PyResult<Self> {
        spatavg::io::read_truth(&path, panel.map(|p| p.0.time_ids()))
            .map(Self)
            .map_err(err)
    }

    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Moment statistics of a panel against its truth series.
#[pyclass(name = "Moments", module = "spatavg_py", frozen)]
struct Moments(spatavg::MomentSet);

#[pymethods]
impl Moments {
    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }

    #[getter]
    fn n_sites(&self) -> usize {
        self.0.n_sites()
    }

    #[getter]
    fn mean_truth(&self) -> f64 {
        self.0.mean_truth
    }

    #[getter]
    fn mean_obs(&self) -> Vec<f64> {
        self.0.mean_obs.iter().copied().collect()
    }

    #[getter]
    fn d2_diag(&self) -> Vec<f64> {
        self.0.d2_diag.iter().copied().collect()
    }

    fn d1(&self) -> Vec<Vec<f64>> {
        rows(&self.0.d1)
    }

    fn cov_obs(&self) -> Vec<Vec<f64>> {
        rows(&self.0.cov_obs)
    }

    fn to_toml(&self, panel: &Panel) -> PyResult<String> {
        spatavg::MomentSummary::new(&self.0, panel.0.location_ids(), panel.0.coords())
            .to_toml()
            .map_err(err)
    }
}

#[pyfunction]
#[pyo3(signature = (panel, truth, sigma_eps=0.0, alpha=1.0, normalization="unbiased"))]
fn estimate_moments(panel: &Panel, truth: &Truth, sigma_eps: f64, alpha: f64, normalization: &str) -> PyResult<Moments> {
    let noise = NoiseModel::new(sigma_eps).map_err(err)?;
    spatavg::estimate_moments_with(&panel.0, &truth.0, &noise, &self::avail(alpha)?, self::normalization(normalization)?)
        .map(Moments)
        .map_err(err)
}

fn report_dict<'py>(py: Python<'py>, r: &spatavg::StatReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("bias_sq", r.bias_sq)?;
    d.set_item("variance", r.variance)?;
    d.set_item("mse", r.mse)?;
    d.set_item("se", r.se)?;
    d.set_item("validity_ratio", r.validity_ratio)?;
    d.set_item("term_sampling", r.bias_term_sampling)?;
    d.set_item("term_missing", r.bias_term_missing)?;
    Ok(d)
}

/// Bias, variance, MSE and standard error of the weights `beta`.
#[pyfunction]
#[pyo3(signature = (moments, beta, alpha=None))]
fn stat_report<'py>(py: Python<'py>, moments: &Moments, beta: Vec<f64>, alpha: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
    let a = avail(alpha.unwrap_or(moments.0.alpha))?;
    let r = spatavg::stat_report(&moments.0, &weights(beta)?, &a).map_err(err)?;
    report_dict(py, &r)
}

/// Solution of one weight optimization.
#[pyclass(name = "OptimizedScheme", module = "spatavg_py", frozen, get_all)]
struct OptimizedScheme {
    beta: Vec<f64>,
    rho: Vec<f64>,
    lambda_: f64,
    objective_value: f64,
    kkt_residual: f64,
    active_set: Vec<usize>,
    iterations: usize,
    ridge_applied: bool,
    report: Py<PyDict>,
}

#[pymethods]
impl OptimizedScheme {
    fn __repr__(&self) -> String {
        format!(
            "OptimizedScheme(support={}, objective_value={}, kkt_residual={:e})",
            self.beta.iter().filter(|&&b| b > 1e-6).count(),
            self.objective_value,
            self.kkt_residual
        )
    }
}

fn scheme(py: Python<'_>, s: spatavg::OptimizedScheme) -> PyResult<OptimizedScheme> {
    let sol = s.solution;
    Ok(OptimizedScheme {
        beta: sol.beta.as_slice().to_vec(),
        rho: sol.rho.iter().copied().collect(),
        lambda_: sol.lambda,
        objective_value: sol.objective,
        kkt_residual: sol.kkt_residual,
        active_set: sol.active_set,
        iterations: sol.iterations,
        ridge_applied: sol.ridge_applied,
        report: report_dict(py, &s.report)?.unbind(),
    })
}

/// Optimal nonnegative weights summing to one for `objective`.
#[pyfunction]
#[pyo3(signature = (moments, objective="mse", alpha=None, variance_form="compact"))]
fn optimize(py: Python<'_>, moments: &Moments, objective: &str, alpha: Option<f64>, variance_form: &str) -> PyResult<OptimizedScheme> {
    let a = avail(alpha.unwrap_or(moments.0.alpha))?;
    let obj: Objective = parse(objective)?;
    let form = self::variance_form(variance_form)?;
    let s = py.detach(|| spatavg::optimize(&moments.0, &a, obj, form)).map_err(err)?;
    scheme(py, s)
}

/// Minimizes `b' Q b` over the unit simplex; returns `(beta, lambda, objective)`.
#[pyfunction]
fn solve_qp(q: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, f64, f64)> {
    let p = spatavg::QpProblem::new(matrix(&q)?).map_err(err)?;
    let s = spatavg::solve_qp(&p).map_err(err)?;
    Ok((s.beta.as_slice().to_vec(), s.lambda, s.objective))
}

#[pyfunction]
fn minimize_missing_bias_closed_form(d2_diag: Vec<f64>) -> PyResult<Vec<f64>> {
    spatavg::minimize_missing_bias_closed_form(&d2_diag)
        .map(|w| w.as_slice().to_vec())
        .map_err(err)
}

/// Monte Carlo ensemble statistics of the weighted average.
#[pyfunction]
#[pyo3(signature = (panel, truth, beta, alpha, realizations=5000, seed=0))]
fn simulate<'py>(
    py: Python<'py>,
    panel: &Panel,
    truth: &Truth,
    beta: Vec<f64>,
    alpha: f64,
    realizations: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SimConfig {
        n_realizations: realizations,
        seed,
        alpha_grid: vec![alpha],
        ..SimConfig::default()
    };
    let (b, a) = (weights(beta)?, avail(alpha)?);
    let s = py
        .detach(|| spatavg::simulate(&panel.0, &truth.0, &b, &a, &cfg))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("bias_sq", s.sim_bias_sq)?;
    d.set_item("variance", s.sim_variance)?;
    d.set_item("mc_stderr_bias", s.mc_stderr_bias)?;
    d.set_item("mc_stderr_var", s.mc_stderr_var)?;
    d.set_item("ensemble_mean", s.ensemble_mean_series.clone())?;
    d.set_item("realizations", s.n_realizations)?;
    Ok(d)
}

/// Exact expectation over every availability pattern (small networks only).
#[pyfunction]
fn enumerate_exact<'py>(py: Python<'py>, panel: &Panel, truth: &Truth, beta: Vec<f64>, alpha: f64) -> PyResult<Bound<'py, PyDict>> {
    let (b, a) = (weights(beta)?, avail(alpha)?);
    let e = py
        .detach(|| spatavg::enumerate_exact(&panel.0, &truth.0, &b, &a))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("bias_sq", e.bias_sq)?;
    d.set_item("variance", e.variance)?;
    d.set_item("mean", e.mean_series.clone())?;
    Ok(d)
}

/// Synthetic panel and truth from a correlated random field.
#[pyfunction]
#[pyo3(signature = (n_sites, n_steps, corr_length=0.2, sigma_eps=0.0, seed=0, layout="grid2d"))]
fn generate_synthetic(
    n_sites: usize,
    n_steps: usize,
    corr_length: f64,
    sigma_eps: f64,
    seed: u64,
    layout: &str,
) -> PyResult<(Panel, Truth)> {
    let noise = NoiseModel::new(sigma_eps).map_err(err)?;
    let mut cfg = spatavg::SynthConfig::new(n_sites, n_steps, corr_length, noise, seed);
    cfg.layout = parse(layout)?;
    let out = spatavg::generate(&cfg).map_err(err)?;
    Ok((Panel(out.panel), Truth(out.truth)))
}

#[pymodule]
fn spatavg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SpatavgError", m.py().get_type::<SpatavgError>())?;
    m.add_class::<Panel>()?;
    m.add_class::<Truth>()?;
    m.add_class::<Moments>()?;
    m.add_class::<OptimizedScheme>()?;
    m.add_function(wrap_pyfunction!(estimate_moments, m)?)?;
    m.add_function(wrap_pyfunction!(stat_report, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(solve_qp, m)?)?;
    m.add_function(wrap_pyfunction!(minimize_missing_bias_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_exact, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
