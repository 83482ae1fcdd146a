//! Python bindings: models, configured experiments, the LQ transfer and the
//! constrained projection. Arrays cross the boundary as nested lists.

use std::path::{Path, PathBuf};

use fspronto::config::{bundled, parse_config};
use fspronto::fspronto::{project_to_target, solve};
use fspronto::lq::solve_lq_transfer;
use fspronto::{
    Curve, DynamicsModel, Error, Experiment as CoreExperiment, HessianMode, LqProblem, LtvData, PendulumModel,
    QuadApprox, Terminal, TimeGrid, Trajectory as CoreTrajectory, VectorSignal,
};
use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

type Rows = Vec<Vec<f64>>;

create_exception!(fspronto_py, FsprontoError, PyException, "Raised for every library error; the message starts with the error kind.");

fn to_py(e: Error) -> PyErr {
    FsprontoError::new_err(format!("[{}] {e}", e.kind()))
}

fn vector(v: &DVector<f64>) -> Vec<f64> {
    v.as_slice().to_vec()
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(key: &str, data: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let cols = data.first().map_or(0, Vec::len);
    if data.is_empty() || cols == 0 || data.iter().any(|r| r.len() != cols) {
        return Err(to_py(Error::config(key, "expected a non-empty rectangular list of rows")));
    }
    Ok(DMatrix::from_fn(data.len(), cols, |i, j| data[i][j]))
}

fn signal_rows(s: &VectorSignal) -> Vec<Vec<f64>> {
    s.values().iter().map(vector).collect()
}

/// Feasible trajectory sampled on a grid.
#[pyclass(frozen, module = "fspronto_py")]
pub struct Trajectory {
    inner: CoreTrajectory,
}

#[pymethods]
impl Trajectory {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.grid().nodes()
    }

    #[getter]
    fn states(&self) -> Vec<Vec<f64>> {
        signal_rows(self.inner.states())
    }

    #[getter]
    fn inputs(&self) -> Vec<Vec<f64>> {
        signal_rows(self.inner.inputs())
    }

    #[getter]
    fn terminal_error(&self) -> Option<f64> {
        self.inner.terminal_error()
    }

    #[getter]
    fn dynamics_residual(&self) -> f64 {
        self.inner.dynamics_residual()
    }

    /// CSV with columns `t, x_*, u_*`.
    fn to_csv(&self) -> String {
        self.inner.curve().to_csv("x", "u")
    }

    fn __len__(&self) -> usize {
        self.inner.grid().n_nodes()
    }
}

/// Inverted pendulum on a cart, `theta = 0` upright.
#[pyclass(frozen, module = "fspronto_py")]
pub struct Pendulum {
    inner: PendulumModel,
}

#[pymethods]
impl Pendulum {
    #[new]
    #[pyo3(signature = (length = 0.5, gravity = 9.81))]
    fn new(length: f64, gravity: f64) -> PyResult<Self> {
        Ok(Self { inner: PendulumModel::new(length, gravity).map_err(to_py)? })
    }

    #[getter]
    fn length(&self) -> f64 {
        self.inner.length()
    }

    #[getter]
    fn gravity(&self) -> f64 {
        self.inner.gravity()
    }

    /// `f(x, u)`.
    fn f(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<Vec<f64>> {
        let (x, u) = self.point(x, u)?;
        Ok(vector(&self.inner.eval_f(&x, &u)))
    }

    /// `(f_x, f_u)` as lists of rows.
    fn jacobians(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<(Rows, Rows)> {
        let (x, u) = self.point(x, u)?;
        Ok((rows(&self.inner.eval_fx(&x, &u)), rows(&self.inner.eval_fu(&x, &u))))
    }

    /// Energy-pumping swing-up from `x0` with a stabilizing catch near upright.
    #[pyo3(signature = (x0, horizon, n_nodes = 2001))]
    fn swing_up_guess(&self, x0: Vec<f64>, horizon: f64, n_nodes: usize) -> PyResult<(Rows, Rows)> {
        let grid = TimeGrid::new(horizon, n_nodes).map_err(to_py)?;
        let curve = self.inner.swing_up_guess(grid, &DVector::from_vec(x0)).map_err(to_py)?;
        Ok((signal_rows(&curve.alpha), signal_rows(&curve.mu)))
    }
}

impl Pendulum {
    fn point(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<(DVector<f64>, DVector<f64>)> {
        if x.len() != 2 {
            return Err(to_py(Error::dimension("x", 2, x.len())));
        }
        if u.len() != 1 {
            return Err(to_py(Error::dimension("u", 1, u.len())));
        }
        Ok((DVector::from_vec(x), DVector::from_vec(u)))
    }
}

/// Outcome of a solve.
#[pyclass(frozen, module = "fspronto_py")]
pub struct SolveResult {
    #[pyo3(get)]
    status: String,
    #[pyo3(get)]
    cost: f64,
    #[pyo3(get)]
    trajectory: Py<Trajectory>,
    history: String,
}

#[pymethods]
impl SolveResult {
    /// Per-iteration records as a list of dicts.
    #[getter]
    fn history<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        py.import("json")?.call_method1("loads", (&self.history,))
    }

    #[getter]
    fn iterations(&self, py: Python<'_>) -> PyResult<usize> {
        Ok(self.history(py)?.len()?.saturating_sub(1))
    }
}

/// A configured optimal transfer problem.
#[pyclass(frozen, module = "fspronto_py")]
pub struct Experiment {
    inner: CoreExperiment,
}

fn load(source: &str) -> PyResult<(String, PathBuf)> {
    let path = Path::new(source);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| to_py(e.into()))?;
        return Ok((text, path.parent().map(Path::to_path_buf).unwrap_or_default()));
    }
    if let Some(text) = bundled(source) {
        return Ok((text.to_string(), PathBuf::from(".")));
    }
    Ok((source.to_string(), PathBuf::from(".")))
}

#[pymethods]
impl Experiment {
    /// Builds from a bundled config name, a config file path or JSON text.
    /// Overrides replace top-level `solver` keys.
    #[new]
    #[pyo3(signature = (config = "pendulum_transfer", n_nodes = None, **solver))]
    fn new(config: &str, n_nodes: Option<usize>, solver: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let (text, base) = load(config)?;
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| to_py(Error::Parse(e.to_string())))?;
        if let Some(n) = n_nodes {
            value["n_nodes"] = n.into();
        }
        if let Some(solver) = solver {
            let py = solver.py();
            let overrides: String = py.import("json")?.call_method1("dumps", (solver,))?.extract()?;
            let overrides: serde_json::Value =
                serde_json::from_str(&overrides).map_err(|e| to_py(Error::Parse(e.to_string())))?;
            let target = &mut value["solver"];
            if target.is_null() {
                *target = serde_json::Value::Object(Default::default());
            }
            for (k, v) in overrides.as_object().into_iter().flatten() {
                target[k] = v.clone();
            }
        }
        let parsed = parse_config(&value.to_string()).map_err(to_py)?;
        Ok(Self { inner: parsed.build(&base).map_err(to_py)? })
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.problem.grid.tf()
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.problem.grid.n_nodes()
    }

    #[getter]
    fn x0(&self) -> Vec<f64> {
        vector(&self.inner.problem.x0)
    }

    #[getter]
    fn x_t(&self) -> Vec<f64> {
        vector(&self.inner.problem.x_t)
    }

    /// `(states, inputs)` of the configured initial guess.
    #[getter]
    fn guess(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (signal_rows(&self.inner.guess.alpha), signal_rows(&self.inner.guess.mu))
    }

    /// Step-quadrature cost of a curve on the problem grid.
    fn cost(&self, states: Vec<Vec<f64>>, inputs: Vec<Vec<f64>>) -> PyResult<f64> {
        Ok(self.inner.problem.cost_of(&self.curve(states, inputs)?))
    }

    /// Terminally constrained projection of a curve (the guess by default).
    #[pyo3(signature = (states = None, inputs = None))]
    fn project(&self, states: Option<Vec<Vec<f64>>>, inputs: Option<Vec<Vec<f64>>>) -> PyResult<Trajectory> {
        let curve = match (states, inputs) {
            (Some(s), Some(i)) => self.curve(s, i)?,
            (None, None) => self.inner.guess.clone(),
            _ => return Err(to_py(Error::Precondition("pass both states and inputs, or neither".into()))),
        };
        let (traj, _, _) = project_to_target(&self.inner.problem, &curve, &self.inner.options).map_err(to_py)?;
        Ok(Trajectory { inner: traj })
    }

    /// Runs the optimizer from the configured guess, releasing the GIL.
    fn solve(&self, py: Python<'_>) -> PyResult<SolveResult> {
        let exp = &self.inner;
        let out = py
            .detach(|| solve(&exp.problem, &exp.guess, &exp.options))
            .map_err(to_py)?;
        let history = serde_json::to_string(&out.history).map_err(|e| to_py(Error::Parse(e.to_string())))?;
        let status = serde_json::to_value(out.status)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        Ok(SolveResult {
            status,
            cost: out.history.last().map_or(f64::NAN, |r| r.cost),
            trajectory: Py::new(py, Trajectory { inner: out.trajectory })?,
            history,
        })
    }
}

impl Experiment {
    fn curve(&self, states: Vec<Vec<f64>>, inputs: Vec<Vec<f64>>) -> PyResult<Curve> {
        let grid = self.inner.problem.grid;
        let model = self.inner.problem.model.as_ref();
        let alpha = signal(grid, "states", states, model.state_dim())?;
        let mu = signal(grid, "inputs", inputs, model.input_dim())?;
        Curve::new(alpha, mu).map_err(to_py)
    }
}

fn signal(grid: TimeGrid, key: &str, data: Vec<Vec<f64>>, dim: usize) -> PyResult<VectorSignal> {
    if let Some(bad) = data.iter().find(|r| r.len() != dim) {
        return Err(to_py(Error::dimension(key, dim, bad.len())));
    }
    VectorSignal::new(grid, data.into_iter().map(DVector::from_vec).collect()).map_err(to_py)
}

/// Minimum-cost transfer of the LTI system `z' = A z + B v` from `x0` to `x_t`,
/// with cost `1/2 int z'Qz + v'Rv`. Returns a dict with `times`, `states`,
/// `inputs`, `cost` and `terminal_error`.
#[pyfunction]
#[pyo3(signature = (a, b, q, r, x0, x_t, horizon, n_nodes = 1001))]
#[allow(clippy::too_many_arguments)]
fn lq_transfer<'py>(
    py: Python<'py>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    x0: Vec<f64>,
    x_t: Vec<f64>,
    horizon: f64,
    n_nodes: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let grid = TimeGrid::new(horizon, n_nodes).map_err(to_py)?;
    let (a, b, q, r) = (matrix("A", &a)?, matrix("B", &b)?, matrix("Q", &q)?, matrix("R", &r)?);
    let n = a.nrows();
    let ltv = LtvData::constant(grid, a, b).map_err(to_py)?;
    let mut quad = QuadApprox::zero_with_r(grid, n, r);
    quad.q = fspronto::Signal::constant(grid, q);
    let problem = LqProblem::new(ltv, quad, DVector::from_vec(x0), Terminal::FixedState(DVector::from_vec(x_t)))
        .map_err(to_py)?;
    let sol = solve_lq_transfer(&problem).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("times", grid.nodes())?;
    out.set_item("states", signal_rows(&sol.zeta.alpha))?;
    out.set_item("inputs", signal_rows(&sol.zeta.mu))?;
    out.set_item("cost", sol.cost)?;
    out.set_item("terminal_error", sol.terminal_error)?;
    Ok(out)
}

/// Names of the bundled configurations.
#[pyfunction]
fn bundled_configs() -> Vec<&'static str> {
    fspronto::config::BUNDLED.iter().map(|(name, _)| *name).collect()
}

/// Validates a JSON config and returns it with every default filled in.
#[pyfunction]
fn normalize_config(text: &str) -> PyResult<String> {
    let config = parse_config(text).map_err(to_py)?;
    serde_json::to_string_pretty(&config).map_err(|e| to_py(Error::Parse(e.to_string())))
}

/// Accepted values of the `hessian_mode` option.
#[pyfunction]
fn hessian_modes() -> Vec<String> {
    [HessianMode::GaussNewton, HessianMode::Newton]
        .iter()
        .filter_map(|m| serde_json::to_value(m).ok()?.as_str().map(str::to_string))
        .collect()
}

#[pymodule]
fn fspronto_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FsprontoError", m.py().get_type::<FsprontoError>())?;
    m.add_class::<Pendulum>()?;
    m.add_class::<Experiment>()?;
    m.add_class::<SolveResult>()?;
    m.add_class::<Trajectory>()?;
    m.add_function(wrap_pyfunction!(lq_transfer, m)?)?;
    m.add_function(wrap_pyfunction!(bundled_configs, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_config, m)?)?;
    m.add_function(wrap_pyfunction!(hessian_modes, m)?)?;
    Ok(())
}
