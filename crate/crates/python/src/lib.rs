//! Python bindings for `oodbound`.
//!
//! Matrices cross the boundary as lists of rows; results come back as plain
//! Python values or small frozen classes.

use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use oodbound::bounds::{self, BoundReport};
use oodbound::datasets::{self, LabeledDataset, SpuriousConfig};
use oodbound::harness::{self, Experiment, ExperimentConfig};
use oodbound::models::{self, RidgeModel};
use oodbound::robustness::{self, CellCounts};
use oodbound::sharpness::{self, TraceConvention};
use oodbound::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::DimensionMismatch(_) | Error::Config(_) | Error::Empty(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows differ in length"));
    }
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn dataset(x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<LabeledDataset> {
    LabeledDataset::new(matrix(x)?, Array1::from(y), None).map_err(to_py)
}

fn convention(name: &str) -> PyResult<TraceConvention> {
    match name {
        "scalar" => Ok(TraceConvention::Scalar),
        "dimensional" => Ok(TraceConvention::Dimensional),
        other => Err(PyValueError::new_err(format!("unknown convention `{other}`"))),
    }
}

/// A bound split into its additive terms.
#[pyclass(name = "BoundReport", frozen, module = "oodbound")]
struct PyBoundReport(BoundReport);

#[pymethods]
impl PyBoundReport {
    #[getter]
    fn method(&self) -> &'static str {
        self.0.method.as_str()
    }
    #[getter]
    fn source_risk(&self) -> f64 {
        self.0.empirical_source_risk
    }
    #[getter]
    fn distance(&self) -> f64 {
        self.0.distance_term
    }
    #[getter]
    fn robustness(&self) -> f64 {
        self.0.robustness_term
    }
    #[getter]
    fn concentration(&self) -> f64 {
        self.0.concentration_term
    }
    #[getter]
    fn total(&self) -> f64 {
        self.0.total
    }

    /// The CSV record under the bound header, as a column → string dict.
    fn as_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (k, v) in bounds::BOUND_CSV_HEADER.iter().zip(self.0.csv_record()) {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("BoundReport(method={:?}, total={})", self.0.method.as_str(), self.0.total)
    }
}

/// Sharpness κ with the per-sample traces it was built from.
#[pyclass(name = "SharpnessReport", frozen, get_all, module = "oodbound")]
struct PySharpnessReport {
    kappa: f64,
    per_sample_trace: Vec<f64>,
    n_prime_hat: f64,
    param_sq_norm: f64,
}

impl From<sharpness::SharpnessReport> for PySharpnessReport {
    fn from(r: sharpness::SharpnessReport) -> Self {
        Self { kappa: r.kappa, per_sample_trace: r.per_sample_trace, n_prime_hat: r.n_prime_hat, param_sq_norm: r.param_sq_norm }
    }
}

/// Random-projection partition fitted to a reference sample.
#[pyclass(name = "Partition", frozen, module = "oodbound")]
struct PyPartition(robustness::Partition);

#[pymethods]
impl PyPartition {
    #[new]
    #[pyo3(signature = (x, k_target = 1000, proj_dim = robustness::DEFAULT_PROJ_DIM, seed = 0))]
    fn new(x: Vec<Vec<f64>>, k_target: usize, proj_dim: usize, seed: u64) -> PyResult<Self> {
        let n = x.len();
        let reference = dataset(x, vec![1.0; n])?;
        robustness::build_partition_with(&reference, k_target, proj_dim, seed).map(Self).map_err(to_py)
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k
    }

    /// Cell id of every row of `x`.
    fn assign(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let x = matrix(x)?;
        x.rows().into_iter().map(|r| robustness::assign_cell(&self.0, r)).collect::<oodbound::Result<_>>().map_err(to_py)
    }

    /// TV distance between the cell histograms of two samples.
    fn tv_distance(&self, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
        let (ca, cb) = (CellCounts::from_cells(self.assign(a)?), CellCounts::from_cells(self.assign(b)?));
        robustness::tv_distance(&ca, &cb).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

#[pyfunction]
fn concentration_term(m_loss: f64, k: usize, n: usize, delta: f64) -> PyResult<f64> {
    bounds::concentration_term(m_loss, k, n, delta).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (source_risk, m_loss, dtv, epsilon, k, n, delta = bounds::DEFAULT_DELTA))]
fn robust_ood_bound(source_risk: f64, m_loss: f64, dtv: f64, epsilon: f64, k: usize, n: usize, delta: f64) -> PyResult<PyBoundReport> {
    bounds::robust_ood_bound(source_risk, m_loss, dtv, epsilon, k, n, delta).map(PyBoundReport).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (source_risk, proxy_dist, d_prime, n, delta = bounds::DEFAULT_DELTA))]
fn zhao_bound(source_risk: f64, proxy_dist: f64, d_prime: usize, n: usize, delta: f64) -> PyResult<PyBoundReport> {
    bounds::zhao_bound(source_risk, proxy_dist, d_prime, n, delta).map(PyBoundReport).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (source_risk, dis_hat, kl, m, alpha = 1.0, delta = bounds::DEFAULT_DELTA))]
fn pacbayes_bound(source_risk: f64, dis_hat: f64, kl: f64, m: usize, alpha: f64, delta: f64) -> PyResult<PyBoundReport> {
    bounds::pacbayes_bound(source_risk, dis_hat, kl, m, alpha, delta).map(PyBoundReport).map_err(to_py)
}

#[pyfunction]
fn success_probability(d: usize, r: f64) -> PyResult<f64> {
    bounds::success_probability(d, r).map_err(to_py)
}

#[pyfunction]
fn proxy_a_distance(source_x: Vec<Vec<f64>>, target_x: Vec<Vec<f64>>, seed: u64) -> PyResult<f64> {
    bounds::proxy_a_distance(matrix(source_x)?.view(), matrix(target_x)?.view(), seed).map_err(to_py)
}

/// TV distance between two cell-id lists.
#[pyfunction]
fn tv_distance(a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
    robustness::tv_distance(&CellCounts::from_cells(a), &CellCounts::from_cells(b)).map_err(to_py)
}

/// Ridge estimate `θ̂` for the given penalty.
#[pyfunction]
fn fit_ridge(x: Vec<Vec<f64>>, y: Vec<f64>, beta: f64) -> PyResult<Vec<f64>> {
    let x = matrix(x)?;
    models::fit_ridge(x.view(), Array1::from(y).view(), beta).map(|m| m.theta_hat.to_vec()).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (x, theta_hat, beta, convention = "scalar"))]
fn ridge_sharpness(x: Vec<Vec<f64>>, theta_hat: Vec<f64>, beta: f64, convention: &str) -> PyResult<PySharpnessReport> {
    let x = matrix(x)?;
    let model = RidgeModel { theta_hat: Array1::from(theta_hat), beta, n_train: x.nrows() };
    sharpness::ridge_sharpness(&model, x.view(), self::convention(convention)?).map(Into::into).map_err(to_py)
}

/// Central-difference Hessian trace of a Python callable `f(list[float]) -> float`.
#[pyfunction]
#[pyo3(signature = (loss_at, w0, h = sharpness::DEFAULT_FD_STEP))]
fn hessian_trace_fd(loss_at: Bound<'_, PyAny>, w0: Vec<f64>, h: f64) -> PyResult<f64> {
    let mut failure = None;
    let result = sharpness::hessian_trace_fd(
        |w| match loss_at.call1((w.to_vec(),)).and_then(|v| v.extract::<f64>()) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        &w0,
        h,
    );
    match failure {
        Some(e) => Err(e),
        None => result.map_err(to_py),
    }
}

#[pyfunction]
fn estimate_n_prime(per_sample_trace: Vec<f64>) -> PyResult<f64> {
    sharpness::estimate_n_prime(&per_sample_trace).map_err(to_py)
}

type Sample = (Vec<Vec<f64>>, Vec<f64>, Vec<u8>);

/// Spurious-correlation sample as `(x, y, groups)`.
#[pyfunction]
#[pyo3(signature = (n = 500, d = 100, p_maj = 0.9, seed = 0))]
fn gen_spurious(n: usize, d: usize, p_maj: f64, seed: u64) -> PyResult<Sample> {
    let cfg = SpuriousConfig { n, d, p_maj, ..SpuriousConfig::standard(seed) };
    let data = datasets::gen_spurious(&cfg).map_err(to_py)?;
    let groups = data.groups().map(<[u8]>::to_vec).unwrap_or_default();
    Ok((rows(&data.features().to_owned()), data.labels().to_vec(), groups))
}

#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    harness::spearman(&x, &y).map_err(to_py)
}

/// Runs an experiment and returns its CSV text; `config` is a JSON string or `None` for defaults.
#[pyfunction]
#[pyo3(signature = (experiment, config = None))]
fn run_experiment(py: Python<'_>, experiment: &str, config: Option<&str>) -> PyResult<String> {
    let e: Experiment = experiment.parse().map_err(to_py)?;
    let cfg = match config {
        None => ExperimentConfig::default_for(e),
        Some(text) => ExperimentConfig::from_json(text).map_err(to_py)?,
    };
    if cfg.experiment() != e {
        return Err(PyValueError::new_err(format!("config is for `{}`", cfg.experiment())));
    }
    py.detach(|| harness::run_experiment(&cfg).and_then(|t| t.to_csv_string())).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "oodbound")]
fn oodbound_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBoundReport>()?;
    m.add_class::<PySharpnessReport>()?;
    m.add_class::<PyPartition>()?;
    m.add_function(wrap_pyfunction!(concentration_term, m)?)?;
    m.add_function(wrap_pyfunction!(robust_ood_bound, m)?)?;
    m.add_function(wrap_pyfunction!(zhao_bound, m)?)?;
    m.add_function(wrap_pyfunction!(pacbayes_bound, m)?)?;
    m.add_function(wrap_pyfunction!(success_probability, m)?)?;
    m.add_function(wrap_pyfunction!(proxy_a_distance, m)?)?;
    m.add_function(wrap_pyfunction!(tv_distance, m)?)?;
    m.add_function(wrap_pyfunction!(fit_ridge, m)?)?;
    m.add_function(wrap_pyfunction!(ridge_sharpness, m)?)?;
    m.add_function(wrap_pyfunction!(hessian_trace_fd, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_n_prime, m)?)?;
    m.add_function(wrap_pyfunction!(gen_spurious, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
