//! Python bindings for `snse-core`.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use snse_core::cli::{self, check_suite, run_study, Command};
use snse_core::config::{parse_config, parse_config_str, ExperimentConfig};
use snse_core::integrator;
use snse_core::moments::StudyRow;
use snse_core::nonlinear::{ladyzhenskaya_ratio, skew_ratio, BilinearWorkspace};
use snse_core::scenario::Scenario as CoreScenario;
use snse_core::spectral::io::content_hash;
use snse_core::spectral::{build_periodic_basis, DomainKind, DomainSpec, SpectralField, StokesBasis};
use snse_core::Error;

create_exception!(snse, ConfigError, PyValueError, "Invalid configuration or parameters.");
create_exception!(snse, NumericError, PyRuntimeError, "Numerical failure, blow-up or I/O error.");

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) => ConfigError::new_err(e.to_string()),
        _ => NumericError::new_err(e.to_string()),
    }
}

fn study_command(name: &str) -> PyResult<Command> {
    Ok(match name.replace('_', "-").as_str() {
        "study-v" | "v" => Command::StudyV,
        "study-h" | "h" => Command::StudyH,
        "study-bound" | "bound" => Command::StudyBound,
        "study-prob" | "prob" => Command::StudyProb,
        "study-breckner" | "breckner" => Command::StudyBreckner,
        _ => return Err(ConfigError::new_err(format!("unknown study `{name}`"))),
    })
}

fn row_dict<'py>(py: Python<'py>, r: &StudyRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("study", &r.study)?;
    d.set_item("scenario", &r.scenario)?;
    d.set_item("level", r.level)?;
    d.set_item("T", r.horizon)?;
    d.set_item("param", &r.param)?;
    d.set_item("n_samples", r.stats.n_samples)?;
    d.set_item("mean", r.stats.mean)?;
    d.set_item("variance", r.stats.variance)?;
    d.set_item("ci", r.stats.ci)?;
    d.set_item("min", r.stats.min)?;
    d.set_item("max", r.stats.max)?;
    d.set_item("excluded", r.stats.excluded)?;
    Ok(d)
}

/// Truncated Stokes eigenbasis.
#[pyclass(frozen, module = "snse")]
struct Basis {
    inner: Arc<StokesBasis>,
}

#[pymethods]
impl Basis {
    /// Spectral basis of the periodic torus with side `side_length`.
    #[staticmethod]
    fn periodic(py: Python<'_>, side_length: f64, n_modes: usize) -> PyResult<Self> {
        let b = py.detach(|| build_periodic_basis(side_length, n_modes)).map_err(py_err)?;
        Ok(Self { inner: Arc::new(b) })
    }

    /// Discrete eigenbasis of the no-slip square on a `grid_points` cell grid.
    #[staticmethod]
    fn dirichlet(py: Python<'_>, side_length: f64, grid_points: usize, n_modes: usize) -> PyResult<Self> {
        let b = py
            .detach(|| {
                let domain = DomainSpec::new(DomainKind::DirichletSquare, side_length, grid_points)?;
                StokesBasis::build(&domain, n_modes)
            })
            .map_err(py_err)?;
        Ok(Self { inner: Arc::new(b) })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues().to_vec()
    }

    fn gram_deviation(&self) -> f64 {
        self.inner.gram_deviation()
    }

    fn max_divergence(&self) -> f64 {
        self.inner.max_divergence()
    }

    fn content_hash(&self) -> String {
        content_hash(&self.inner)
    }

    /// `|<B(u,v),v>| / (|u|_V |v|_V |v|_H)` for coefficient vectors `u`, `v`.
    #[pyo3(signature = (u, v, dealias = true))]
    fn skew_ratio(&self, u: Vec<f64>, v: Vec<f64>, dealias: bool) -> PyResult<f64> {
        let ws = BilinearWorkspace::new(Arc::clone(&self.inner), dealias);
        let u = SpectralField::new(u).map_err(py_err)?;
        let v = SpectralField::new(v).map_err(py_err)?;
        skew_ratio(&u, &v, &ws).map_err(py_err)
    }

    #[pyo3(signature = (u, dealias = true))]
    fn ladyzhenskaya_ratio(&self, u: Vec<f64>, dealias: bool) -> PyResult<f64> {
        let ws = BilinearWorkspace::new(Arc::clone(&self.inner), dealias);
        let u = SpectralField::new(u).map_err(py_err)?;
        ladyzhenskaya_ratio(&u, &ws).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Basis(dim={}, lambda_1={:.6})", self.inner.dim(), self.inner.eigenvalues()[0])
    }
}

/// Parsed and validated experiment configuration.
#[pyclass(module = "snse", skip_from_py_object)]
#[derive(Clone)]
struct Config {
    inner: ExperimentConfig,
}

#[pymethods]
impl Config {
    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: parse_config(&path).map_err(py_err)? })
    }

    #[staticmethod]
    fn from_str(text: &str) -> PyResult<Self> {
        Ok(Self { inner: parse_config_str(text).map_err(py_err)? })
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
    fn label(&self) -> String {
        self.inner.label.clone()
    }

    #[getter]
    fn n_ref(&self) -> usize {
        self.inner.n_ref()
    }

    #[getter]
    fn levels(&self) -> Vec<usize> {
        self.inner.levels()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn basis(&self, py: Python<'_>) -> PyResult<Basis> {
        let b = py.detach(|| self.inner.build_basis()).map_err(py_err)?;
        Ok(Basis { inner: Arc::new(b) })
    }

    /// Scenario on `basis`, or on a freshly built basis.
    #[pyo3(signature = (basis = None))]
    fn scenario(&self, py: Python<'_>, basis: Option<&Basis>) -> PyResult<Scenario> {
        let inner = match basis {
            Some(b) => self.inner.scenario_on(Arc::clone(&b.inner)),
            None => py.detach(|| self.inner.scenario()),
        }
        .map_err(py_err)?;
        Ok(Scenario { cfg: self.inner.clone(), inner })
    }

    /// Rows of the diagnostic suite: `name`, `value`, `bound`, `pass`.
    fn check<'py>(&self, py: Python<'py>, basis: &Basis) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let rows = py.detach(|| check_suite(&self.inner, &basis.inner)).map_err(py_err)?;
        rows.iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("name", &r.name)?;
                d.set_item("value", r.value)?;
                d.set_item("bound", r.bound)?;
                d.set_item("pass", r.pass)?;
                Ok(d)
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Config(label={:?}, seed={})", self.inner.label, self.inner.seed)
    }
}

/// A configured Galerkin system with its initial data.
#[pyclass(frozen, module = "snse")]
struct Scenario {
    cfg: ExperimentConfig,
    inner: CoreScenario,
}

#[pymethods]
impl Scenario {
    #[getter]
    fn initial(&self) -> Vec<f64> {
        self.inner.u0.coeffs().to_vec()
    }

    /// One path at `level` (default: the reference level). Returns the
    /// norm histories as lists keyed by column name.
    #[pyo3(signature = (level = None, seed = None, stream = 0))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        level: Option<usize>,
        seed: Option<u64>,
        stream: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let level = level.unwrap_or_else(|| self.cfg.n_ref());
        let seed = seed.unwrap_or(self.cfg.seed);
        let rec = py
            .detach(|| self.inner.system.simulate(&self.inner.u0, level, seed, stream))
            .map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("time", &rec.times)?;
        d.set_item("h_sq", &rec.h_sq)?;
        d.set_item("v_sq", &rec.v_sq)?;
        d.set_item("a_sq", &rec.a_sq)?;
        d.set_item("dissipation", &rec.dissipation)?;
        d.set_item("coeffs", &rec.coeffs)?;
        d.set_item("level", rec.level)?;
        d.set_item("completed", rec.completed())?;
        d.set_item("blow_up_step", rec.blow_up.map(|b| b.step))?;
        Ok(d)
    }

    /// Runs a Monte Carlo study (`v`, `h`, `bound`, `prob` or `breckner`)
    /// and returns its rows.
    fn study<'py>(&self, py: Python<'py>, name: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let command = study_command(name)?;
        let (_, table) = py.detach(|| run_study(&self.cfg, &self.inner, command)).map_err(py_err)?;
        table.rows.iter().map(|r| row_dict(py, r)).collect()
    }
}

/// Strong error of the scheme on scalar geometric Brownian motion.
#[pyfunction]
#[pyo3(signature = (exponents, n_paths = 2000, seed = 0))]
fn scalar_strong_order<'py>(
    py: Python<'py>,
    exponents: Vec<u32>,
    n_paths: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = py
        .detach(|| integrator::scalar_strong_order(&exponents, n_paths, seed))
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("dts", r.dts)?;
    d.set_item("errors", r.errors)?;
    d.set_item("slope", r.slope)?;
    Ok(d)
}

/// Runs the `snse` command line with `args` (without the program name) and
/// returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("snse".to_string()).chain(args).collect();
    py.detach(|| cli::run(argv))
}

#[pymodule]
fn snse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("NumericError", py.get_type::<NumericError>())?;
    m.add_class::<Basis>()?;
    m.add_class::<Config>()?;
    m.add_class::<Scenario>()?;
    m.add_function(wrap_pyfunction!(scalar_strong_order, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
