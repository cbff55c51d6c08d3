//! Python bindings for `gcaloc`.
//!
//! Reports and model headers cross the boundary as JSON text decoded with
//! the standard `json` module, so Python sees plain dicts and lists.

use std::path::PathBuf;

use gcaloc::geometry::{cartesian_to_doa, doa_to_cartesian, test_grid, Doa, Vec3};
use gcaloc::harness::{self, ExperimentConfig};
use gcaloc::metrics::Report;
use gcaloc::room::capture_source;
use gcaloc::{wldm, AcousticEnv, PnnModel};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn to_py(e: gcaloc::Error) -> PyErr {
    let msg = format!("{}: {e}", e.kind());
    match e.kind() {
        "io" => PyIOError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Experiment configuration; the same keys as the TOML config file.
#[pyclass(name = "Config", module = "pygcaloc", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = "", overrides = Vec::new()))]
    fn new(toml: &str, overrides: Vec<String>) -> PyResult<Self> {
        let inner = ExperimentConfig::from_toml(toml, &overrides).map_err(to_py)?;
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, overrides = Vec::new()))]
    fn load(path: PathBuf, overrides: Vec<String>) -> PyResult<Self> {
        let inner = ExperimentConfig::load(Some(&path), &overrides).map_err(to_py)?;
        Ok(PyConfig { inner })
    }

    /// Returns a copy with `key=value` overrides applied.
    fn with_overrides(&self, overrides: Vec<String>) -> PyResult<Self> {
        let inner = ExperimentConfig::from_toml(&self.inner.to_toml(), &overrides).map_err(to_py)?;
        Ok(PyConfig { inner })
    }

    /// Returns a copy at the reference scale (K = 4096).
    fn paper_scale(&self) -> PyResult<Self> {
        self.with_overrides(ExperimentConfig::paper_scale_overrides())
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn num_clusters(&self) -> PyResult<usize> {
        let room = self.inner.room().map_err(to_py)?;
        Ok(self.inner.grid(&room).map_err(to_py)?.k())
    }

    /// Test positions as `(x, y, z, elevation, azimuth, range)` tuples.
    fn test_positions(&self) -> PyResult<Vec<(f64, f64, f64, f64, f64, f64)>> {
        let room = self.inner.room().map_err(to_py)?;
        let array = self.inner.array(&room).map_err(to_py)?;
        let pts = test_grid(&self.inner.test_grid_spec(), array.center(), &room).map_err(to_py)?;
        Ok(pts
            .into_iter()
            .map(|(p, d)| (p[0], p[1], p[2], d.elevation, d.azimuth, d.range))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("Config(seed={}, cluster_size={})", self.inner.seed, self.inner.cluster_size)
    }
}

/// Trained probabilistic neural network.
#[pyclass(name = "Model", module = "pygcaloc")]
struct PyModel {
    inner: PnnModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: PnnModel::load(&path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(PyModel {
            inner: PnnModel::read_from(data).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        harness::save_model(&self.inner, &path).map_err(to_py)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    #[getter]
    fn num_clusters(&self) -> usize {
        self.inner.num_clusters()
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    #[getter]
    fn num_samples(&self) -> usize {
        self.inner.num_samples()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma()
    }

    fn header<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let text = serde_json::to_string(self.inner.header()).map_err(|e| to_py(e.into()))?;
        json_to_py(py, &text)
    }

    /// Cluster probabilities for one feature vector.
    fn cluster_probabilities(&self, feature: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.cluster_probabilities(&feature).map_err(to_py)?.probs)
    }

    fn classify(&self, feature: Vec<f64>) -> PyResult<usize> {
        self.inner.classify(&feature).map_err(to_py)
    }

    fn __eq__(&self, other: PyRef<'_, PyModel>) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(k={}, n={}, d={}, sigma={})",
            self.inner.num_clusters(),
            self.inner.num_samples(),
            self.inner.dimension(),
            self.inner.sigma()
        )
    }
}

/// Per-environment localization metrics.
#[pyclass(name = "Report", module = "pygcaloc")]
struct PyReport {
    inner: Report,
}

#[pymethods]
impl PyReport {
    /// Fraction of test positions with both angle errors within `alpha`
    /// degrees.
    fn srde(&self, alpha: f64) -> PyResult<f64> {
        gcaloc::metrics::srde(&self.inner.outcomes, alpha).map_err(to_py)
    }

    #[getter]
    fn positions(&self) -> usize {
        self.inner.positions
    }

    #[getter]
    fn bound_violations(&self) -> usize {
        self.inner.bound_violations
    }

    #[getter]
    fn eps_mean(&self) -> f64 {
        self.inner.eps_mean
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| to_py(e.into()))
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.to_json()?)
    }

    fn __repr__(&self) -> String {
        format!(
            "Report(positions={}, srde10={:.3}, srde30={:.3})",
            self.inner.positions,
            self.inner.srde_at(10.0).unwrap_or(f64::NAN),
            self.inner.srde_at(30.0).unwrap_or(f64::NAN)
        )
    }
}

/// Simulates the training captures and stores their features.
#[pyfunction]
fn train(py: Python<'_>, config: &PyConfig) -> PyResult<PyModel> {
    let cfg = config.inner.clone();
    let (inner, _) = py.detach(move || harness::train_pipeline(&cfg)).map_err(to_py)?;
    Ok(PyModel { inner })
}

/// Localizes every test position of the config's grid.
#[pyfunction]
fn evaluate(py: Python<'_>, model: &PyModel, config: &PyConfig) -> PyResult<PyReport> {
    let cfg = config.inner.clone();
    let m = &model.inner;
    let (inner, _) = py.detach(|| harness::localize_pipeline(m, &cfg)).map_err(to_py)?;
    Ok(PyReport { inner })
}

/// Simulates one capture from `source` in the config's test environment
/// and returns the estimated position.
#[pyfunction]
#[pyo3(signature = (model, config, source, noise_seed = 0))]
fn localize_point(
    py: Python<'_>,
    model: &PyModel,
    config: &PyConfig,
    source: Vec3,
    noise_seed: u64,
) -> PyResult<Vec3> {
    let cfg = &config.inner;
    let m = &model.inner;
    py.detach(|| {
        harness::check_model(m, cfg)?;
        let room = cfg.room()?;
        let array = cfg.array(&room)?;
        let signal = cfg.source_signal()?;
        let env: AcousticEnv = cfg.test_env().with_seed(noise_seed);
        let capture = capture_source(&room, &array, &env, source, &signal)?;
        Ok(wldm::localize(m, &capture, &cfg.wldm())?.position)
    })
    .map_err(to_py)
}

/// `(elevation, azimuth, range)` of `point` seen from `center`, in degrees
/// and metres.
#[pyfunction]
fn to_doa(point: Vec3, center: Vec3) -> PyResult<(f64, f64, f64)> {
    let d = cartesian_to_doa(point, center).map_err(to_py)?;
    Ok((d.elevation, d.azimuth, d.range))
}

#[pyfunction]
fn from_doa(elevation: f64, azimuth: f64, range: f64, center: Vec3) -> PyResult<Vec3> {
    let d = Doa::new(elevation, azimuth, range).map_err(to_py)?;
    Ok(doa_to_cartesian(d, center))
}

#[pymodule]
fn pygcaloc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(localize_point, m)?)?;
    m.add_function(wrap_pyfunction!(to_doa, m)?)?;
    m.add_function(wrap_pyfunction!(from_doa, m)?)?;
    Ok(())
}
