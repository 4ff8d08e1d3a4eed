//! Python bindings for the transport-control solver.

use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use transport_control::cli::{self, Command};
use transport_control::control::{solve_control, ControlProblem, SolveOptions, SolveReport};
use transport_control::geometry::{build_grid, Domain, Point};
use transport_control::measures::DiscreteMeasure;
use transport_control::structure::{build_annulus_example, build_sparsity_example, check_optimality};
use transport_control::transport::{self, CostModel};
use transport_control::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Convergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_domain(name: &str) -> PyResult<Domain> {
    match name {
        "unit_square" => Ok(Domain::UnitSquare),
        "unit_disk" => Ok(Domain::UnitDisk),
        _ => Err(PyValueError::new_err(format!("unknown domain `{name}`"))),
    }
}

fn parse_cost(name: &str, gamma: Option<f64>) -> PyResult<CostModel> {
    match (name, gamma) {
        ("metric", None) => Ok(CostModel::Metric),
        ("quadratic", None) => Ok(CostModel::Quadratic),
        ("power", Some(g)) => CostModel::power(g).map_err(to_py),
        ("power", None) => Err(PyValueError::new_err("the power cost needs gamma")),
        (_, Some(_)) => Err(PyValueError::new_err("gamma only applies to the power cost")),
        _ => Err(PyValueError::new_err(format!("unknown cost `{name}`"))),
    }
}

/// Uniform lattice over a domain. Returns `(nodes, interior_mask, weights)`.
#[pyfunction]
#[pyo3(signature = (domain, h))]
fn grid(domain: &str, h: f64) -> PyResult<(Vec<Point>, Vec<bool>, Vec<f64>)> {
    let g = build_grid(parse_domain(domain)?, h).map_err(to_py)?;
    Ok((g.nodes().to_vec(), g.interior().to_vec(), g.weights().to_vec()))
}

/// Nonnegative weighted point cloud.
#[pyclass(name = "Measure", module = "transport_control_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMeasure {
    inner: DiscreteMeasure,
}

#[pymethods]
impl PyMeasure {
    #[new]
    fn new(points: Vec<Point>, weights: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: DiscreteMeasure::new(points, weights).map_err(to_py)? })
    }

    #[getter]
    fn points(&self) -> Vec<Point> {
        self.inner.points().to_vec()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    fn total_mass(&self) -> f64 {
        self.inner.total_mass()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Dense cost matrix as a list of rows.
#[pyfunction]
#[pyo3(signature = (sources, targets, cost = "metric", gamma = None))]
fn cost_matrix(sources: Vec<Point>, targets: Vec<Point>, cost: &str, gamma: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
    let c = transport::cost_matrix(&parse_cost(cost, gamma)?, &sources, &targets).map_err(to_py)?;
    Ok((0..c.rows()).map(|i| c.row(i).to_vec()).collect())
}

/// Exact optimal transport between two measures of equal mass.
/// Returns `(value, [(i, j, weight)], phi, psi)`.
#[pyfunction]
#[pyo3(signature = (source, target, cost = "metric", gamma = None))]
#[allow(clippy::type_complexity)]
fn solve_ot(
    source: &PyMeasure,
    target: &PyMeasure,
    cost: &str,
    gamma: Option<f64>,
) -> PyResult<(f64, Vec<(usize, usize, f64)>, Vec<f64>, Vec<f64>)> {
    let (mu, nu) = (&source.inner, &target.inner);
    let c = transport::cost_matrix(&parse_cost(cost, gamma)?, mu.points(), nu.points()).map_err(to_py)?;
    let sol = transport::solve_kantorovich_exact(mu.weights(), nu.weights(), &c).map_err(to_py)?;
    Ok((sol.value, sol.plan.entries().collect(), sol.duals.phi, sol.duals.psi))
}

/// `min_j (c(x_i, ξ_j) − ψ_j)` per source. Returns `(values, argmin)`.
#[pyfunction]
#[pyo3(signature = (psi, sources, targets, cost = "metric", gamma = None))]
fn c_bar_transform(psi: Vec<f64>, sources: Vec<Point>, targets: Vec<Point>, cost: &str, gamma: Option<f64>) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let t = transport::c_bar_transform_points(&psi, &parse_cost(cost, gamma)?, &sources, &targets).map_err(to_py)?;
    Ok((t.values, t.argmin))
}

/// Optimal control problem with a transport-distance prior.
#[pyclass(name = "Problem", module = "transport_control_py", frozen)]
struct PyProblem {
    inner: ControlProblem,
}

#[pymethods]
impl PyProblem {
    /// Disk example whose optimal control concentrates on the circle of radius ½.
    #[staticmethod]
    #[pyo3(signature = (h = 0.04, alpha = 1.0))]
    fn annulus(h: f64, alpha: f64) -> PyResult<Self> {
        Ok(Self { inner: build_annulus_example(h, alpha).map_err(to_py)?.0 })
    }

    /// Example where `α` exceeds the threshold by `factor` and the prior is optimal.
    #[staticmethod]
    #[pyo3(signature = (h = 0.025, factor = 2.0))]
    fn sparsity(h: f64, factor: f64) -> PyResult<Self> {
        Ok(Self { inner: build_sparsity_example(h, factor).map_err(to_py)?.0 })
    }

    /// Problem described by a JSON run config (same schema as the CLI).
    /// Relative paths resolve against `base_dir`.
    #[staticmethod]
    #[pyo3(signature = (config, base_dir = "."))]
    fn from_config(config: &str, base_dir: &str) -> PyResult<Self> {
        let cfg = cli::parse_config_str(config, Path::new(base_dir)).map_err(to_py)?;
        Ok(Self { inner: cli::build_control_problem(&cfg, Command::Solve).map_err(to_py)? })
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    #[getter]
    fn candidates(&self) -> Vec<Point> {
        self.inner.candidates().to_vec()
    }

    #[getter]
    fn prior(&self) -> PyMeasure {
        PyMeasure { inner: self.inner.prior().clone() }
    }

    #[pyo3(signature = (tol = 1e-6, max_iter = 5000))]
    fn solve(&self, py: Python<'_>, tol: f64, max_iter: usize) -> PyResult<PySolution> {
        let opts = SolveOptions { tol, max_iter, ..Default::default() };
        let report = py.detach(|| solve_control(&self.inner, &opts)).map_err(to_py)?;
        let certified = check_optimality(&self.inner, &report, tol).map_err(to_py)?.passed;
        Ok(PySolution { u_bar: PyMeasure { inner: report.u_bar(self.inner.candidates()) }, report, certified })
    }
}

/// Result of a control solve.
#[pyclass(name = "Solution", module = "transport_control_py", frozen)]
struct PySolution {
    report: SolveReport,
    u_bar: PyMeasure,
    certified: bool,
}

#[pymethods]
impl PySolution {
    #[getter]
    fn objective(&self) -> f64 {
        self.report.objective
    }

    #[getter]
    fn gap(&self) -> f64 {
        self.report.gap
    }

    #[getter]
    fn converged(&self) -> bool {
        self.report.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.report.iterations
    }

    /// Whether the optimality certificate holds.
    #[getter]
    fn certified(&self) -> bool {
        self.certified
    }

    #[getter]
    fn u_bar(&self) -> PyMeasure {
        self.u_bar.clone()
    }

    /// Control mass on every candidate point.
    #[getter]
    fn control(&self) -> Vec<f64> {
        self.report.control.clone()
    }

    #[getter]
    fn psi(&self) -> Vec<f64> {
        self.report.psi.clone()
    }

    #[getter]
    fn phi(&self) -> Vec<f64> {
        self.report.phi.clone()
    }

    #[getter]
    fn state(&self) -> Vec<f64> {
        self.report.state.values().to_vec()
    }

    /// Plan entries `(i, j, weight)`.
    #[getter]
    fn plan(&self) -> Vec<(usize, usize, f64)> {
        self.report.plan.entries().collect()
    }
}

#[pymodule]
fn transport_control_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMeasure>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(grid, m)?)?;
    m.add_function(wrap_pyfunction!(cost_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(solve_ot, m)?)?;
    m.add_function(wrap_pyfunction!(c_bar_transform, m)?)?;
    Ok(())
}
