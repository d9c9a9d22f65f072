//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use causal_sdr::harness::{fit_method, run_bench, BenchConfig, Method};
use causal_sdr::nuisance::fit_treatment_model;
use causal_sdr::{
    generate, pca_directions, projection_distance, Basis, Confounding, EstimatingProblem, Panel, RngStream,
    SimulationTruth,
};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: causal_sdr::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("expected a non-empty rectangular list of rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn config_from(config_toml: Option<&str>) -> PyResult<BenchConfig> {
    match config_toml {
        Some(s) => BenchConfig::from_toml_str(s).map_err(err),
        None => Ok(BenchConfig::default()),
    }
}

/// Observed samples: outcome `y`, treatments `a` (n × p) and covariates `c`.
#[pyclass(module = "causal_sdr", frozen)]
struct Dataset {
    inner: causal_sdr::Dataset,
}

#[pymethods]
impl Dataset {
    #[new]
    fn new(y: Vec<f64>, a: Vec<Vec<f64>>, c: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = causal_sdr::Dataset::new(DVector::from_vec(y), to_matrix(&a)?, to_matrix(&c)?).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y.iter().copied().collect()
    }

    #[getter]
    fn a(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.a)
    }

    #[getter]
    fn c(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.c)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    fn to_csv(&self, path: PathBuf) -> PyResult<()> {
        let f = std::fs::File::create(path)?;
        self.inner.write_csv(std::io::BufWriter::new(f)).map_err(err)
    }

    #[staticmethod]
    fn from_csv(path: PathBuf) -> PyResult<Self> {
        let f = std::fs::File::open(path)?;
        let inner = causal_sdr::Dataset::read_csv(std::io::BufReader::new(f)).map_err(err)?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, p={}, q={})", self.inner.n(), self.inner.p(), self.inner.q())
    }
}

/// Outcome of fitting one method.
#[pyclass(module = "causal_sdr", frozen, get_all)]
struct Fit {
    method: String,
    beta_hat: Vec<Vec<f64>>,
    converged: bool,
    iterations: usize,
    final_norm: f64,
    /// Projection distance to the supplied truth, if any.
    distance: Option<f64>,
}

#[pymethods]
impl Fit {
    fn __repr__(&self) -> String {
        match self.distance {
            Some(d) => format!(
                "Fit(method={}, converged={}, iterations={}, distance={d:.4})",
                self.method, self.converged, self.iterations
            ),
            None => format!(
                "Fit(method={}, converged={}, iterations={})",
                self.method, self.converged, self.iterations
            ),
        }
    }
}

/// Simulate a dataset; returns `(dataset, true_basis)`.
#[pyfunction]
#[pyo3(signature = (scenario = "case2-p6", confounding = "confounded", n = 200, seed = 0))]
fn simulate(scenario: &str, confounding: &str, n: usize, seed: u64) -> PyResult<(Dataset, Vec<Vec<f64>>)> {
    let panel: Panel = scenario.parse().map_err(err)?;
    let confounding: Confounding = confounding.parse().map_err(err)?;
    let (inner, truth) = generate(&panel.scenario(confounding, n, seed)).map_err(err)?;
    Ok((Dataset { inner }, to_rows(&truth.beta_true)))
}

/// Fit `method` to `data`. `config` is bench TOML whose solver, kernel and
/// nuisance sections apply.
#[pyfunction]
#[pyo3(signature = (method, data, seed = 0, truth = None, config = None))]
fn fit(
    py: Python<'_>,
    method: &str,
    data: &Dataset,
    seed: u64,
    truth: Option<Vec<Vec<f64>>>,
    config: Option<&str>,
) -> PyResult<Fit> {
    let method: Method = method.parse().map_err(err)?;
    let settings = config_from(config)?.method_settings();
    let truth = truth
        .map(|rows| -> PyResult<SimulationTruth> {
            let beta_true = to_matrix(&rows)?;
            let d = beta_true.ncols();
            Ok(SimulationTruth { beta_true, d })
        })
        .transpose()?;
    let data = &data.inner;
    let result = py.detach(|| {
        let f = fit_method(method, data, truth.as_ref(), &settings, &mut RngStream::new(seed))?;
        let distance = match &truth {
            Some(t) => Some(projection_distance(f.beta_hat.matrix(), &t.beta_true)?.value()),
            None => None,
        };
        Ok::<_, causal_sdr::Error>((f, distance))
    });
    let (f, distance) = result.map_err(err)?;
    Ok(Fit {
        method: method.to_string(),
        beta_hat: to_rows(f.beta_hat.matrix()),
        converged: f.converged,
        iterations: f.iterations,
        final_norm: f.final_norm,
        distance,
    })
}

/// Frobenius distance between the column-space projectors of two bases.
#[pyfunction]
fn distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(projection_distance(&to_matrix(&a)?, &to_matrix(&b)?).map_err(err)?.value())
}

/// Leading `d` principal directions of the rows of `a`.
#[pyfunction]
#[pyo3(signature = (a, d = 2))]
fn pca(a: Vec<Vec<f64>>, d: usize) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&pca_directions(&to_matrix(&a)?, d).map_err(err)?.directions))
}

/// Regression (`weighted=False`) or IPW estimating function at `beta`,
/// one entry per free basis parameter.
#[pyfunction]
#[pyo3(signature = (data, beta, weighted = false, config = None))]
fn moment(data: &Dataset, beta: Vec<Vec<f64>>, weighted: bool, config: Option<&str>) -> PyResult<Vec<f64>> {
    let cfg = config_from(config)?;
    let spec = cfg.nuisance.to_spec();
    let basis = Basis::canonicalize(&to_matrix(&beta)?).map_err(err)?;
    let data = &data.inner;
    let value = if weighted {
        let model = fit_treatment_model(data).map_err(err)?;
        EstimatingProblem::ipw(data, &model, &spec, cfg.kernel)
            .and_then(|p| p.u_ipw(&basis))
            .map_err(err)?
    } else {
        EstimatingProblem::regression(data, &spec, cfg.kernel)
            .and_then(|p| p.u_regression(&basis))
            .map_err(err)?
    };
    Ok(value.vector.iter().copied().collect())
}

/// Run a bench grid from TOML; returns the summary rows as dicts.
#[pyfunction]
#[pyo3(name = "bench")]
fn run_grid<'py>(py: Python<'py>, config: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = BenchConfig::from_toml_str(config).map_err(err)?;
    let outcome = py.detach(|| run_bench(&cfg)).map_err(err)?;
    outcome
        .summary
        .iter()
        .map(|row| {
            let d = PyDict::new(py);
            d.set_item("scenario", row.panel.to_string())?;
            d.set_item("method", row.method.to_string())?;
            d.set_item("runs", row.runs)?;
            d.set_item("failures", row.failures)?;
            d.set_item("median", row.stats.map(|s| s.median))?;
            d.set_item("q1", row.stats.map(|s| s.q1))?;
            d.set_item("q3", row.stats.map(|s| s.q3))?;
            d.set_item("convergence_rate", row.convergence_rate)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
#[pyo3(name = "causal_sdr")]
fn causal_sdr_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Fit>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(distance, m)?)?;
    m.add_function(wrap_pyfunction!(pca, m)?)?;
    m.add_function(wrap_pyfunction!(moment, m)?)?;
    m.add_function(wrap_pyfunction!(run_grid, m)?)?;
    m.add("METHODS", Method::ALL.iter().map(|m| m.name()).collect::<Vec<_>>())?;
    Ok(())
}
