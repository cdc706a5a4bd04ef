//! Python bindings. Structured values cross the boundary as JSON-compatible
//! dicts and lists.

use std::path::PathBuf;

use hemo::error::HemoError;
use hemo::metrics;
use hemo::npe::PosteriorEstimator;
use hemo::population::{sample_subject as sample, subject_seed, PriorSpec};
use hemo::signal::Bandpass;
use hemo::solver::{run_simulation, ProbeRequest, SolverConfig};
use hemo::vascular::{network_from_json, network_to_json, read_network, reference_network as reference, ArterialNetwork, HeartFunction};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(hemo_py, HemoException, PyException, "Raised for every hemo error; the message starts with `module:code`.");

fn err(e: HemoError) -> PyErr {
    HemoException::new_err(format!("{}:{}: {e}", e.module(), e.code()))
}

fn from_py<T: DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| HemoException::new_err(format!("config:json: {e}")))
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| HemoException::new_err(format!("config:json: {e}")))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn network(py: Python<'_>, net: Option<&Bound<'_, PyAny>>) -> PyResult<ArterialNetwork> {
    match net {
        None => Ok(reference()),
        Some(obj) => match obj.extract::<PathBuf>() {
            Ok(path) => read_network(&path).map_err(err),
            Err(_) => {
                let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
                network_from_json(&text, "<dict>").map_err(err)
            }
        },
    }
}

/// The built-in reference network as a dict.
#[pyfunction]
fn reference_network(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    py.import("json")?.call_method1("loads", (network_to_json(&reference()),))
}

/// Run the solver. `heart` and `probes` follow the JSON formats of the
/// command-line tool; `network` is a dict, a path, or None for the
/// reference network.
#[pyfunction]
#[pyo3(signature = (heart, probes, network=None, solver=None))]
fn simulate<'py>(
    py: Python<'py>,
    heart: &Bound<'py, PyAny>,
    probes: &Bound<'py, PyAny>,
    network: Option<&Bound<'py, PyAny>>,
    solver: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let net = self::network(py, network)?;
    let hf: HeartFunction = from_py(py, heart)?;
    let probes: Vec<ProbeRequest> = from_py(py, probes)?;
    let cfg: SolverConfig = solver.map_or_else(|| Ok(SolverConfig::default()), |s| from_py(py, s))?;
    let result = py.detach(|| run_simulation(&net, &hf, &cfg, &probes)).map_err(err)?;
    let out = to_py(py, &result)?;
    out.set_item("relative_mass_drift", result.mass.relative_drift())?;
    Ok(out)
}

/// Draw one virtual subject from the prior (defaults when `prior` is None).
#[pyfunction]
#[pyo3(signature = (subject_id, seed, prior=None))]
fn sample_subject<'py>(py: Python<'py>, subject_id: u64, seed: u64, prior: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let prior: PriorSpec = prior.map_or_else(|| Ok(PriorSpec::default()), |p| from_py(py, p))?;
    let s = sample(&prior, subject_id, subject_seed(seed, subject_id)).map_err(err)?;
    to_py(py, &s)
}

/// Zero-phase 0.5–10 Hz bandpass used by the dataset pipeline.
#[pyfunction]
fn bandpass(x: Vec<f64>) -> Vec<f64> {
    Bandpass::standard().filtfilt(&x)
}

#[pyfunction]
fn mi_bound(alpha: f64, cells: f64, total: f64) -> PyResult<f64> {
    metrics::mi_bound(alpha, cells, total).map_err(err)
}

/// Area between the coverage curve and the diagonal, from calibration levels.
#[pyfunction]
fn acauc(levels: Vec<f64>) -> PyResult<f64> {
    metrics::acauc(&levels).map_err(err)
}

/// Mean credible-region size `(cells, width)` over posterior sample sets.
#[pyfunction]
fn sci(sample_sets: Vec<Vec<f64>>, alpha: f64, lo: f64, hi: f64) -> PyResult<(f64, f64)> {
    metrics::sci(&sample_sets, alpha, lo, hi).map_err(err)
}

#[pyfunction]
fn spearman(truth: Vec<f64>, pred: Vec<f64>) -> PyResult<f64> {
    metrics::spearman(&truth, &pred).map_err(err)
}

/// A trained posterior estimator loaded from a model file.
#[pyclass(frozen)]
struct Posterior {
    inner: PosteriorEstimator<f32>,
}

#[pymethods]
impl Posterior {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Posterior { inner: PosteriorEstimator::load(&path).map_err(err)? })
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label.clone()
    }

    #[getter]
    fn input_len(&self) -> usize {
        self.inner.input_len()
    }

    /// `n` draws of (HR, CO, SVR, LVET) as a list of rows.
    #[pyo3(signature = (segment, age, n=1000, seed=0))]
    fn sample(&self, py: Python<'_>, segment: Vec<f64>, age: f64, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let draws = py.detach(|| self.inner.sample(&segment, age, n, seed)).map_err(err)?;
        Ok(draws.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    fn log_density(&self, phi: Vec<f64>, segment: Vec<f64>, age: f64) -> PyResult<f64> {
        self.inner.log_density(&phi, &segment, age).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Posterior(label={:?}, params={})", self.inner.label, self.inner.param_count())
    }
}

#[pymodule]
fn hemo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HemoException", m.py().get_type::<HemoException>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Posterior>()?;
    m.add_function(wrap_pyfunction!(reference_network, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sample_subject, m)?)?;
    m.add_function(wrap_pyfunction!(bandpass, m)?)?;
    m.add_function(wrap_pyfunction!(mi_bound, m)?)?;
    m.add_function(wrap_pyfunction!(acauc, m)?)?;
    m.add_function(wrap_pyfunction!(sci, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    Ok(())
}
