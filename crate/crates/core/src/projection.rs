//! Curves, certified trajectories, the tracking projection `P`, its derivative,
//! gain design, and the final-state constrained projection `P_c`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{signals_to_csv, CsvTable, MatrixSignal, Signal, TimeGrid, VectorSignal};
use crate::linalg::block2;
use crate::lq::{DiscreteLq, Terminal};
use crate::model::DynamicsModel;
use crate::transcription::{self, StepExpansion};

/// States at or beyond this magnitude count as a diverged closed loop.
const DIVERGENCE_BOUND: f64 = 1e10;

/// Default dynamics-residual tolerance for certification.
pub const FEAS_TOL: f64 = 1e-9;

/// A state-input pair sampled on a grid; not necessarily a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub alpha: VectorSignal,
    pub mu: VectorSignal,
}

impl Curve {
    pub fn new(alpha: VectorSignal, mu: VectorSignal) -> Result<Self> {
        if alpha.grid() != mu.grid() {
            return Err(Error::dimension("curve grid", "state and input on one grid", "different grids"));
        }
        Ok(Self { alpha, mu })
    }

    pub fn zeros(grid: TimeGrid, n: usize, m: usize) -> Self {
        Self {
            alpha: Signal::constant(grid, DVector::zeros(n)),
            mu: Signal::constant(grid, DVector::zeros(m)),
        }
    }

    pub fn grid(&self) -> TimeGrid {
        self.alpha.grid()
    }

    pub fn state_dim(&self) -> usize {
        self.alpha.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.mu.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.is_finite() && self.mu.is_finite()
    }

    /// `self + gamma * other`.
    pub fn axpy(&self, gamma: f64, other: &Curve) -> Curve {
        Curve {
            alpha: self.alpha.axpy(gamma, &other.alpha),
            mu: self.mu.axpy(gamma, &other.mu),
        }
    }

    /// Largest node-wise distance in either component.
    pub fn max_distance(&self, other: &Curve) -> f64 {
        self.alpha.max_distance(&other.alpha).max(self.mu.max_distance(&other.mu))
    }

    /// CSV with columns `t,<state>_1..,<input>_1..`.
    pub fn to_csv(&self, state: &str, input: &str) -> String {
        let grid = self.grid();
        signals_to_csv(grid, &[(state, &self.alpha), (input, &self.mu)])
    }

    pub fn from_csv(text: &str, state: &str, input: &str) -> Result<Self> {
        let table = CsvTable::parse(text)?;
        Curve::new(table.signal(state)?, table.signal(input)?)
    }
}

/// A curve known to satisfy the held-input RK4 dynamics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    #[serde(skip)]
    curve: Curve,
    dynamics_residual: f64,
    terminal_error: Option<f64>,
}

impl Trajectory {
    /// Checks `curve` against the dynamics; fails if the residual exceeds `feas_tol`.
    pub fn certify(curve: Curve, model: &dyn DynamicsModel, feas_tol: f64) -> Result<Self> {
        check_dims(&curve, model)?;
        let grid = curve.grid();
        let residual = transcription::dynamics_residual(model, curve.alpha.values(), curve.mu.values(), grid.dt());
        if !(residual <= feas_tol) {
            return Err(Error::Precondition(format!(
                "curve is not a trajectory: dynamics residual {residual:.3e} exceeds {feas_tol:.3e}"
            )));
        }
        Ok(Self {
            curve,
            dynamics_residual: residual,
            terminal_error: None,
        })
    }

    /// Records `|x(T) - x_t|`.
    pub fn with_target(mut self, x_t: &DVector<f64>) -> Self {
        self.terminal_error = Some((self.curve.alpha.last() - x_t).norm());
        self
    }

    pub fn curve(&self) -> &Curve {
        &self.curve
    }

    pub fn into_curve(self) -> Curve {
        self.curve
    }

    pub fn states(&self) -> &VectorSignal {
        &self.curve.alpha
    }

    pub fn inputs(&self) -> &VectorSignal {
        &self.curve.mu
    }

    pub fn grid(&self) -> TimeGrid {
        self.curve.grid()
    }

    pub fn dynamics_residual(&self) -> f64 {
        self.dynamics_residual
    }

    pub fn terminal_error(&self) -> Option<f64> {
        self.terminal_error
    }
}

fn check_dims(curve: &Curve, model: &dyn DynamicsModel) -> Result<()> {
    if curve.state_dim() != model.state_dim() {
        return Err(Error::dimension("curve state", model.state_dim(), curve.state_dim()));
    }
    if curve.input_dim() != model.input_dim() {
        return Err(Error::dimension("curve input", model.input_dim(), curve.input_dim()));
    }
    Ok(())
}

/// Time-varying tracking gain `K(t)`, `m x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGain {
    pub k: MatrixSignal,
}

impl FeedbackGain {
    pub fn new(k: MatrixSignal) -> Self {
        Self { k }
    }

    pub fn zeros(grid: TimeGrid, n: usize, m: usize) -> Self {
        Self {
            k: Signal::constant(grid, DMatrix::zeros(m, n)),
        }
    }

    fn check(&self, curve: &Curve) -> Result<()> {
        if self.k.grid() != curve.grid() {
            return Err(Error::dimension("gain grid", "curve grid", "different grid"));
        }
        let want = (curve.input_dim(), curve.state_dim());
        if self.k.shape() != want {
            return Err(Error::dimension("K", format!("{want:?}"), format!("{:?}", self.k.shape())));
        }
        Ok(())
    }
}

/// `P(xi)`: runs `x+ = step(x, u)` with `u_k = mu_k + K_k (alpha_k - x_k)` from `x_0 = alpha_0`.
pub fn project(xi: &Curve, gain: &FeedbackGain, model: &dyn DynamicsModel) -> Result<Trajectory> {
    check_dims(xi, model)?;
    gain.check(xi)?;
    let grid = xi.grid();
    let h = grid.dt();
    let (alpha, mu, k) = (xi.alpha.values(), xi.mu.values(), gain.k.values());
    let n_nodes = grid.n_nodes();
    let mut xs = Vec::with_capacity(n_nodes);
    let mut us = Vec::with_capacity(n_nodes);
    xs.push(alpha[0].clone());
    for j in 0..n_nodes {
        let u = &mu[j] + &k[j] * (&alpha[j] - &xs[j]);
        if j + 1 < n_nodes {
            let next = transcription::step(model, &xs[j], &u, h);
            if !next.iter().all(|v| v.is_finite()) || next.amax() >= DIVERGENCE_BOUND {
                return Err(Error::ProjectionDivergence { t: grid.node(j + 1) });
            }
            xs.push(next);
        }
        us.push(u);
    }
    let curve = Curve::new(Signal::new(grid, xs)?, Signal::new(grid, us)?)?;
    Ok(Trajectory {
        curve,
        dynamics_residual: 0.0,
        terminal_error: None,
    })
}

/// Exact step Jacobians `(phi_k, gamma_k)` along a trajectory.
pub fn linearize_steps(model: &dyn DynamicsModel, traj: &Curve) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
    let h = traj.grid().dt();
    let (xs, us) = (traj.alpha.values(), traj.mu.values());
    (0..traj.grid().n_steps())
        .map(|k| transcription::step_jacobians(model, &xs[k], &us[k], h))
        .collect()
}

/// `DP(xi) zeta` given precomputed step Jacobians.
pub fn tangent_project_with(
    zeta: &Curve,
    steps: &[(DMatrix<f64>, DMatrix<f64>)],
    gain: &FeedbackGain,
) -> Result<Curve> {
    gain.check(zeta)?;
    let grid = zeta.grid();
    let (beta, nu, k) = (zeta.alpha.values(), zeta.mu.values(), gain.k.values());
    let mut zs = Vec::with_capacity(grid.n_nodes());
    let mut vs = Vec::with_capacity(grid.n_nodes());
    zs.push(DVector::zeros(zeta.state_dim()));
    for j in 0..grid.n_nodes() {
        let v = &nu[j] + &k[j] * (&beta[j] - &zs[j]);
        if j < steps.len() {
            let (phi, gamma) = &steps[j];
            let next = phi * &zs[j] + gamma * &v;
            if !next.iter().all(|x| x.is_finite()) {
                return Err(Error::BlowUp { t: grid.node(j + 1) });
            }
            zs.push(next);
        }
        vs.push(v);
    }
    Curve::new(Signal::new(grid, zs)?, Signal::new(grid, vs)?)
}

/// `DP(xi) zeta`: the linearized closed loop with `z_0 = 0`.
pub fn tangent_project(zeta: &Curve, xi: &Trajectory, gain: &FeedbackGain, model: &dyn DynamicsModel) -> Result<Curve> {
    if zeta.grid() != xi.grid() {
        return Err(Error::dimension("tangent grid", "trajectory grid", "different grid"));
    }
    tangent_project_with(zeta, &linearize_steps(model, xi.curve()), gain)
}

fn weighted_steps(model: &dyn DynamicsModel, curve: &Curve, weight: &DMatrix<f64>) -> Vec<StepExpansion> {
    let h = curve.grid().dt();
    let (xs, us) = (curve.alpha.values(), curve.mu.values());
    (0..curve.grid().n_steps())
        .map(|k| transcription::expand_step_weighted(model, &xs[k], &us[k], h, weight))
        .collect()
}

/// Tracking gain from the terminal-penalty LQR on the linearization along `xi`
/// with weights `qk`, `rk` and terminal weight `qk`.
pub fn design_gain(xi: &Curve, model: &dyn DynamicsModel, qk: &DMatrix<f64>, rk: &DMatrix<f64>) -> Result<FeedbackGain> {
    check_dims(xi, model)?;
    let (n, m) = (model.state_dim(), model.input_dim());
    if qk.shape() != (n, n) {
        return Err(Error::dimension("Qk", format!("{n}x{n}"), format!("{}x{}", qk.nrows(), qk.ncols())));
    }
    if rk.shape() != (m, m) {
        return Err(Error::dimension("Rk", format!("{m}x{m}"), format!("{}x{}", rk.nrows(), rk.ncols())));
    }
    crate::linalg::check_symmetric_definite(qk, 1e-12)
        .map_err(|e| Error::InvalidWeight(format!("Qk {e} (must be positive definite)")))?;
    crate::linalg::check_symmetric_definite(rk, 1e-12)
        .map_err(|e| Error::InvalidWeight(format!("Rk {e} (must be positive definite)")))?;
    let weight = block2(qk, &DMatrix::zeros(n, m), &DMatrix::zeros(m, n), rk);
    let lq = DiscreteLq::new(
        xi.grid(),
        weighted_steps(model, xi, &weight),
        DVector::zeros(n),
        Terminal::Penalty {
            p1: qk.clone(),
            r1: DVector::zeros(n),
        },
    )?;
    Ok(FeedbackGain::new(lq.riccati()?.k))
}

/// Minimum-norm tangent curve moving the terminal state by `delta`.
pub fn min_norm_correction(traj: &Curve, model: &dyn DynamicsModel, delta: &DVector<f64>) -> Result<Curve> {
    let (n, m) = (model.state_dim(), model.input_dim());
    let weight = DMatrix::identity(n + m, n + m);
    let lq = DiscreteLq::new(
        traj.grid(),
        weighted_steps(model, traj, &weight),
        DVector::zeros(n),
        Terminal::FixedState(delta.clone()),
    )?;
    Ok(lq.solve()?.zeta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstrainedProjectionOptions {
    /// Terminal tolerance; `None` means `1e-8 (1 + |x_T|)`.
    pub tol: Option<f64>,
    pub max_iter: usize,
}

impl Default for ConstrainedProjectionOptions {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: 20,
        }
    }
}

impl ConstrainedProjectionOptions {
    pub fn resolved_tol(&self, x_t: &DVector<f64>) -> f64 {
        self.tol.unwrap_or(1e-8 * (1.0 + x_t.norm()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionReport {
    /// Newton corrections applied after the initial projection.
    pub iterations: usize,
    /// `|x(T) - x_T|` of the initial projection and of every corrected iterate.
    pub terminal_error_history: Vec<f64>,
    pub dynamics_residual: f64,
}

/// `P_c(xi)`: Newton iteration on the terminal state over trajectories.
///
/// Starts from `P(xi)`; each correction solves the minimum-norm LQ transfer on the
/// exact linearization and projects `xi_k + zeta_k` again, with `K` held fixed.
pub fn constrained_project(
    xi: &Curve,
    x_t: &DVector<f64>,
    gain: &FeedbackGain,
    model: &dyn DynamicsModel,
    opts: &ConstrainedProjectionOptions,
) -> Result<(Trajectory, ProjectionReport)> {
    if x_t.len() != model.state_dim() {
        return Err(Error::dimension("x_T", model.state_dim(), x_t.len()));
    }
    let tol = opts.resolved_tol(x_t);
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!("projection tolerance must be positive, got {tol}")));
    }
    let mut traj = project(xi, gain, model)?.with_target(x_t);
    let mut history = vec![traj.terminal_error.unwrap()];
    for it in 0..=opts.max_iter {
        let err = *history.last().unwrap();
        if err < tol {
            let report = ProjectionReport {
                iterations: it,
                terminal_error_history: history,
                dynamics_residual: traj.dynamics_residual,
            };
            return Ok((traj, report));
        }
        if it == opts.max_iter {
            break;
        }
        let delta = x_t - traj.curve.alpha.last();
        let zeta = min_norm_correction(&traj.curve, model, &delta)?;
        traj = project(&traj.curve.axpy(1.0, &zeta), gain, model)?.with_target(x_t);
        history.push(traj.terminal_error.unwrap());
        log::debug!("constrained projection: correction {} terminal error {:.3e}", it + 1, history.last().unwrap());
    }
    Err(Error::ProjectionNotConverged { history })
}
