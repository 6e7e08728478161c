//! Python bindings. Fields cross the boundary as flat lists in `[q][m][i]`
//! order (collocation node, time level including `m = 0`, interior node);
//! `Problem.shape` gives the three extents. Reports come back as dicts.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

use riskpde_core::commands::{self, CommandError};
use riskpde_core::config::{parse_config, parse_config_str, RunConfig};
use riskpde_core::dynamics::{adjoint_solve, forward_solve, Problem as CoreProblem};
use riskpde_core::error::Error;
use riskpde_core::objective::{evaluate, evaluate_objective, inner_product_u};
use riskpde_core::optimizer::{random_control, solve, SolveReport};
use riskpde_core::oracle::{fd_directional, kkt_solve, mc_objective};
use riskpde_core::spatial::{assemble_mass, assemble_stiffness, build_mesh};
use riskpde_core::stochastic::{build_collocation_grid, FieldRole, SpaceTimeStochField};

fn core_err(e: Error) -> PyErr {
    match e {
        Error::StepFailure { .. } | Error::SingularSystem(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn command_err(e: CommandError) -> PyErr {
    match e {
        CommandError::Config(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py_json<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

/// `(diag, off)` of the P1 mass matrix on the interior nodes.
#[pyfunction]
fn mass_matrix(n_elements: usize, length: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let m = assemble_mass(&build_mesh(n_elements, length).map_err(core_err)?);
    Ok((m.diag, m.off))
}

/// `(diag, off)` of the P1 stiffness matrix for per-element coefficients.
#[pyfunction]
fn stiffness_matrix(n_elements: usize, length: f64, coefficients: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let mesh = build_mesh(n_elements, length).map_err(core_err)?;
    let k = assemble_stiffness(&mesh, &coefficients).map_err(core_err)?;
    Ok((k.diag, k.off))
}

/// `(nodes, weights)` of the tensor Gauss-Legendre rule on `[-1, 1]^dim`,
/// weights normalized to sum to one.
#[pyfunction]
fn collocation_grid(dim: usize, points_per_dim: usize) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let g = build_collocation_grid(dim, points_per_dim).map_err(core_err)?;
    Ok((g.nodes().to_vec(), g.weights().to_vec()))
}

fn config_from(path: &Path) -> PyResult<RunConfig> {
    parse_config(path).map_err(|e| PyValueError::new_err(e.0))
}

/// Runs the `solve` command and returns the report; files go to `out_dir`.
#[pyfunction]
fn run_solve<'py>(py: Python<'py>, config_path: PathBuf, out_dir: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config_from(&config_path)?;
    let report = py.detach(|| commands::cmd_solve(&cfg, &out_dir)).map_err(command_err)?;
    to_py_json(py, &report)
}

/// Runs the finite-difference gradient check; raises on failure.
#[pyfunction]
fn run_gradcheck<'py>(py: Python<'py>, config_path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config_from(&config_path)?;
    let report = py.detach(|| commands::cmd_gradcheck(&cfg)).map_err(command_err)?;
    to_py_json(py, &report)
}

/// A discretized problem built from a JSON run configuration.
#[pyclass(frozen, module = "riskpde")]
struct Problem {
    config: RunConfig,
    inner: CoreProblem,
}

impl Problem {
    fn field(&self, data: Vec<f64>, role: FieldRole) -> PyResult<SpaceTimeStochField> {
        SpaceTimeStochField::from_vec(self.inner.shape(), role, data).map_err(core_err)
    }

    fn from_config(config: RunConfig) -> PyResult<Self> {
        let inner = config.build_problem().map_err(|e| PyValueError::new_err(e.0))?;
        Ok(Self { config, inner })
    }
}

fn report_json(report: &SolveReport) -> serde_json::Value {
    serde_json::json!({
        "iterations": report.iterations,
        "converged": report.converged,
        "objective": report.final_objective(),
        "objective_history": report.objective_history,
        "projected_grad_norms": report.projected_grad_norms,
        "step_sizes": report.step_sizes,
        "complementarity_residual": report.complementarity_residual,
        "wall_time": report.wall_time,
    })
}

#[pymethods]
impl Problem {
    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Self::from_config(config_from(&path)?)
    }

    /// Relative table paths resolve against `base_dir`.
    #[staticmethod]
    #[pyo3(signature = (text, base_dir = PathBuf::from(".")))]
    fn from_json(text: &str, base_dir: PathBuf) -> PyResult<Self> {
        Self::from_config(parse_config_str(text, &base_dir).map_err(|e| PyValueError::new_err(e.0))?)
    }

    /// The validated configuration, defaults filled in, as JSON text.
    fn config_json(&self) -> String {
        self.config.to_json()
    }

    /// `(n_nodes, n_t, n_interior)`; a field has `n_nodes * (n_t + 1) * n_interior` entries.
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let s = self.inner.shape();
        (s.n_nodes, s.n_t, s.n_interior)
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.grid().weights().to_vec()
    }

    fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.inner.shape().len()]
    }

    fn random_control(&self, seed: u64) -> Vec<f64> {
        random_control(self.inner.shape(), seed).into_vec()
    }

    fn forward(&self, py: Python<'_>, u: Vec<f64>) -> PyResult<Vec<f64>> {
        let u = self.field(u, FieldRole::Control)?;
        py.detach(|| forward_solve(&self.inner, &u)).map(|y| y.into_vec()).map_err(core_err)
    }

    fn adjoint(&self, py: Python<'_>, y: Vec<f64>) -> PyResult<Vec<f64>> {
        let y = self.field(y, FieldRole::State)?;
        py.detach(|| adjoint_solve(&self.inner, &y)).map(|l| l.into_vec()).map_err(core_err)
    }

    /// Objective breakdown at `u` as a dict.
    fn objective<'py>(&self, py: Python<'py>, u: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        let u = self.field(u, FieldRole::Control)?;
        let b = py.detach(|| evaluate_objective(&self.inner, &u)).map_err(core_err)?;
        to_py_json(py, &b)
    }

    /// Riesz representative `βu + λ` of the derivative.
    fn gradient(&self, py: Python<'_>, u: Vec<f64>) -> PyResult<Vec<f64>> {
        let u = self.field(u, FieldRole::Control)?;
        py.detach(|| evaluate(&self.inner, &u)).map(|e| e.gradient.into_vec()).map_err(core_err)
    }

    fn inner_product(&self, f: Vec<f64>, g: Vec<f64>) -> PyResult<f64> {
        let f = self.field(f, FieldRole::Control)?;
        let g = self.field(g, FieldRole::Control)?;
        inner_product_u(&self.inner, &f, &g).map_err(core_err)
    }

    /// Projected gradient from `u0` (zero when omitted) with the configured
    /// solver options. Returns `(u, report)`.
    #[pyo3(signature = (u0 = None))]
    fn solve<'py>(&self, py: Python<'py>, u0: Option<Vec<f64>>) -> PyResult<(Vec<f64>, Bound<'py, PyAny>)> {
        let u0 = match u0 {
            Some(v) => self.field(v, FieldRole::Control)?,
            None => self.inner.zeros(FieldRole::Control),
        };
        let opts = self.config.solver_options();
        let (u, report) = py.detach(|| solve(&self.inner, &u0, &opts)).map_err(core_err)?;
        Ok((u.into_vec(), to_py_json(py, &report_json(&report))?))
    }

    /// Dense direct solve of the unconstrained optimality system:
    /// `(state, control, adjoint)`.
    fn kkt_solve(&self, py: Python<'_>) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let sol = py.detach(|| kkt_solve(&self.inner)).map_err(core_err)?;
        Ok((sol.state.into_vec(), sol.control.into_vec(), sol.adjoint.into_vec()))
    }

    /// Monte Carlo estimate of `J(u)`: `(estimate, std_error)`.
    #[pyo3(signature = (u, n_samples = 10_000, seed = 42))]
    fn mc_objective(&self, py: Python<'_>, u: Vec<f64>, n_samples: usize, seed: u64) -> PyResult<(f64, f64)> {
        let u = self.field(u, FieldRole::Control)?;
        let est = py.detach(|| mc_objective(&self.inner, &u, n_samples, seed)).map_err(core_err)?;
        Ok((est.estimate, est.std_error))
    }

    #[pyo3(signature = (u, w, h = 1e-5))]
    fn fd_directional(&self, py: Python<'_>, u: Vec<f64>, w: Vec<f64>, h: f64) -> PyResult<f64> {
        let u = self.field(u, FieldRole::Control)?;
        let w = self.field(w, FieldRole::Control)?;
        py.detach(|| fd_directional(&self.inner, &u, &w, h)).map_err(core_err)
    }
}

#[pymodule]
fn riskpde(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(mass_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(stiffness_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(collocation_grid, m)?)?;
    m.add_function(wrap_pyfunction!(run_solve, m)?)?;
    m.add_function(wrap_pyfunction!(run_gradcheck, m)?)?;
    m.add_class::<Problem>()?;
    Ok(())
}
