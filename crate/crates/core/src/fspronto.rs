//! The outer fsPRONTO loop: constrained descent directions, Armijo backtracking on
//! `h(P(xi + gamma zeta))`, and updates through the constrained projection.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::{total_cost, HessianMode, RunningCost};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::lq::{DiscreteLq, Terminal};
use crate::model::DynamicsModel;
use crate::projection::{
    constrained_project, design_gain, project, ConstrainedProjectionOptions, Curve, FeedbackGain, ProjectionReport, Trajectory,
    FEAS_TOL,
};
use crate::transcription::{expand_step, step_curvature, StepExpansion};

/// Optimal control problem with fixed initial and terminal states.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: Arc<dyn DynamicsModel>,
    pub cost: Arc<dyn RunningCost>,
    pub x0: DVector<f64>,
    pub x_t: DVector<f64>,
    pub grid: TimeGrid,
}

impl Problem {
    pub fn new(
        model: Arc<dyn DynamicsModel>,
        cost: Arc<dyn RunningCost>,
        x0: DVector<f64>,
        x_t: DVector<f64>,
        grid: TimeGrid,
    ) -> Result<Self> {
        let n = model.state_dim();
        if x0.len() != n {
            return Err(Error::dimension("x0", n, x0.len()));
        }
        if x_t.len() != n {
            return Err(Error::dimension("x_T", n, x_t.len()));
        }
        Ok(Self {
            model,
            cost,
            x0,
            x_t,
            grid,
        })
    }

    pub fn cost_of(&self, curve: &Curve) -> f64 {
        total_cost(self.cost.as_ref(), self.model.as_ref(), curve)
    }

    /// State linearly interpolated from `x0` to `x_T`, zero input.
    pub fn straight_line_guess(&self) -> Curve {
        let tf = self.grid.tf();
        let alpha = crate::grid::Signal::from_fn(self.grid, |_, t| self.x0.lerp(&self.x_t, t / tf))
            .expect("one value per node");
        Curve {
            alpha,
            mu: crate::grid::Signal::constant(self.grid, DVector::zeros(self.model.input_dim())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_outer_iter: usize,
    pub descent_tol: f64,
    pub armijo_alpha: f64,
    pub backtrack_beta: f64,
    pub gamma_min: f64,
    /// Terminal tolerance of the constrained projection; `None` means `1e-8 (1 + |x_T|)`.
    pub proj_tol: Option<f64>,
    pub proj_max_iter: usize,
    pub feas_tol: f64,
    pub hessian_mode: HessianMode,
    /// Tracking-gain weights; identity when unset.
    pub gain_q: Option<DMatrix<f64>>,
    pub gain_r: Option<DMatrix<f64>>,
    /// Redesign the gain every this many iterations; 0 keeps the initial gain.
    pub gain_redesign_period: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_outer_iter: 50,
            descent_tol: 1e-6,
            armijo_alpha: 1e-4,
            backtrack_beta: 0.5,
            gamma_min: 1e-4,
            proj_tol: None,
            proj_max_iter: 20,
            feas_tol: FEAS_TOL,
            hessian_mode: HessianMode::GaussNewton,
            gain_q: None,
            gain_r: None,
            gain_redesign_period: 1,
        }
    }
}

/// Allowance for the cost gap between the merit `h(P(.))` and the `P_c` update.
pub fn projection_drift(cost: f64) -> f64 {
    1e-6 * (1.0 + cost.abs())
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::config(format!("solver.{key}"), msg));
        if !(self.descent_tol > 0.0) {
            return bad("descent_tol", "must be positive");
        }
        if !(self.armijo_alpha > 0.0 && self.armijo_alpha < 0.5) {
            return bad("armijo_alpha", "must lie in (0, 0.5)");
        }
        if !(self.backtrack_beta > 0.0 && self.backtrack_beta < 1.0) {
            return bad("backtrack_beta", "must lie in (0, 1)");
        }
        if !(self.gamma_min > 0.0 && self.gamma_min <= 1.0) {
            return bad("gamma_min", "must lie in (0, 1]");
        }
        if let Some(t) = self.proj_tol {
            if !(t > 0.0) {
                return bad("proj_tol", "must be positive");
            }
        }
        if !(self.feas_tol > 0.0) {
            return bad("feas_tol", "must be positive");
        }
        Ok(())
    }

    pub fn projection_options(&self) -> ConstrainedProjectionOptions {
        ConstrainedProjectionOptions {
            tol: self.proj_tol,
            max_iter: self.proj_max_iter,
        }
    }

    fn gain_weights(&self, n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        (
            self.gain_q.clone().unwrap_or_else(|| DMatrix::identity(n, n)),
            self.gain_r.clone().unwrap_or_else(|| DMatrix::identity(m, m)),
        )
    }
}

/// Diagnostics for iterate `xi_index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub cost: f64,
    pub descent: f64,
    pub descent_abs: f64,
    /// Step that produced this iterate; `None` for the initial trajectory.
    pub gamma: Option<f64>,
    pub terminal_error: f64,
    pub dynamics_residual: f64,
    /// Newton corrections of the constrained projection that produced this iterate.
    pub projection_iterations: usize,
    /// Second-order model actually used for this iterate's descent direction.
    pub hessian_mode: HessianMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub trajectory: Trajectory,
    pub history: Vec<IterationRecord>,
    pub status: SolveStatus,
    pub gain: FeedbackGain,
}

/// Constrained projection of `curve` with a gain designed for it: a first gain
/// along `curve`, a redesign along `P(curve)`, then `P_c(curve)`.
pub fn project_to_target(
    problem: &Problem,
    curve: &Curve,
    options: &SolverOptions,
) -> Result<(Trajectory, ProjectionReport, FeedbackGain)> {
    if curve.grid() != problem.grid {
        return Err(Error::Precondition("curve must be sampled on the problem grid".into()));
    }
    let model = problem.model.as_ref();
    if curve.state_dim() != model.state_dim() || curve.input_dim() != model.input_dim() {
        return Err(Error::dimension(
            "curve",
            format!("n={}, m={}", model.state_dim(), model.input_dim()),
            format!("n={}, m={}", curve.state_dim(), curve.input_dim()),
        ));
    }
    let (qk, rk) = options.gain_weights(model.state_dim(), model.input_dim());
    let k0 = design_gain(curve, model, &qk, &rk)?;
    let eta = project(curve, &k0, model)?;
    let gain = design_gain(eta.curve(), model, &qk, &rk)?;
    let (traj, report) = constrained_project(curve, &problem.x_t, &gain, model, &options.projection_options())?;
    Ok((traj, report, gain))
}

/// Builds a feasible, terminally exact starting trajectory from a guess.
pub fn initial_trajectory(problem: &Problem, guess: &Curve, options: &SolverOptions) -> Result<(Trajectory, FeedbackGain, usize)> {
    if guess.grid() != problem.grid {
        return Err(Error::Precondition("guess must be sampled on the problem grid".into()));
    }
    let gap = (guess.alpha.first() - &problem.x0).norm();
    if gap > 1e-12 * (1.0 + problem.x0.norm()) {
        return Err(Error::Precondition(format!("guess starts {gap:.3e} away from x0")));
    }
    match project_to_target(problem, guess, options) {
        Ok((traj, report, gain)) => Ok((traj, gain, report.iterations)),
        Err(e @ Error::Dimension { .. }) => Err(e),
        Err(e) => Err(Error::CannotInitialize(Box::new(e))),
    }
}

/// `Dg(xi) zeta` for `g = h o P`: for a tangent `zeta` at the trajectory `xi`
/// this is `Dh(xi) zeta = sum_k a_k' z_k + b_k' v_k` on the step transcription.
pub fn directional_derivative(problem: &Problem, xi: &Trajectory, zeta: &Curve) -> f64 {
    let (zs, vs) = (zeta.alpha.values(), zeta.mu.values());
    expansions(problem, xi.curve())
        .iter()
        .enumerate()
        .map(|(k, st)| st.a.dot(&zs[k]) + st.b.dot(&vs[k]))
        .sum()
}

/// A descent direction and its directional derivative.
#[derive(Debug, Clone)]
pub struct Descent {
    pub zeta: Curve,
    /// `Dh(xi) zeta = sum_k a_k' z_k + b_k' v_k`.
    pub value: f64,
    /// Terminal multiplier of the LQ subproblem.
    pub p1: DVector<f64>,
    pub mode: HessianMode,
}

fn expansions(problem: &Problem, xi: &Curve) -> Vec<StepExpansion> {
    let (xs, us) = (xi.alpha.values(), xi.mu.values());
    let grid = xi.grid();
    (0..grid.n_steps())
        .map(|k| {
            let t = grid.node(k);
            expand_step(
                problem.model.as_ref(),
                Some(problem.cost.as_ref()),
                &xs[k],
                &us[k],
                t,
                grid.step(k),
            )
        })
        .collect()
}

/// Adds Lagrangian curvature to the step Hessians; `lambda[k + 1]` multiplies
/// the equation of step `k`.
fn add_curvature(problem: &Problem, xi: &Curve, steps: &mut [StepExpansion], lambda: &[DVector<f64>]) {
    let grid = xi.grid();
    let (xs, us) = (xi.alpha.values(), xi.mu.values());
    for (k, st) in steps.iter_mut().enumerate() {
        let curv = step_curvature(
            problem.model.as_ref(),
            problem.cost.as_ref(),
            &xs[k],
            &us[k],
            grid.node(k),
            grid.step(k),
            &lambda[k + 1],
        );
        let hess = st.hessian() + curv;
        st.set_hessian(&hess);
    }
}

fn solve_descent(grid: TimeGrid, steps: &[StepExpansion], n: usize) -> Result<(Descent, Vec<DVector<f64>>)> {
    let lq = DiscreteLq::new(grid, steps.to_vec(), DVector::zeros(n), Terminal::FixedState(DVector::zeros(n)))?;
    let sol = lq.solve()?;
    let (zs, vs) = (sol.zeta.alpha.values(), sol.zeta.mu.values());
    let value = steps
        .iter()
        .enumerate()
        .map(|(k, st)| st.a.dot(&zs[k]) + st.b.dot(&vs[k]))
        .sum();
    let costate = sol.costate();
    let descent = Descent {
        value,
        p1: sol.riccati.p1,
        zeta: sol.zeta,
        mode: HessianMode::GaussNewton,
    };
    Ok((descent, costate))
}

/// Solves the LQ transfer `z(0) = 0`, `z(T) = 0` on the local model along `xi`.
///
/// The Gauss-Newton subproblem is always solved. In Newton mode its multipliers
/// supply the dynamics curvature, and the Newton subproblem replaces it unless
/// that model is not positive definite on the tangent space or fails to give
/// descent.
pub fn descent_direction(xi: &Trajectory, problem: &Problem, options: &SolverOptions) -> Result<Descent> {
    let grid = xi.grid();
    let n = problem.model.state_dim();
    let mut steps = expansions(problem, xi.curve());
    let (gauss_newton, lambda) = solve_descent(grid, &steps, n)?;
    if options.hessian_mode == HessianMode::Newton {
        add_curvature(problem, xi.curve(), &mut steps, &lambda);
        match solve_descent(grid, &steps, n) {
            Ok((newton, _)) if newton.value <= 0.0 => {
                return Ok(Descent {
                    mode: HessianMode::Newton,
                    ..newton
                })
            }
            Ok((newton, _)) => log::warn!("newton model gives ascent ({:.3e}); using gauss-newton", newton.value),
            Err(e) => log::warn!("newton model is not positive definite ({e}); using gauss-newton"),
        }
    }
    Ok(gauss_newton)
}

/// Accepted step and the merit value there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchResult {
    pub gamma: f64,
    pub merit: f64,
}

/// Armijo backtracking on `g(gamma) = h(P(xi + gamma zeta))`.
pub fn line_search(
    xi: &Trajectory,
    zeta: &Curve,
    descent: f64,
    problem: &Problem,
    gain: &FeedbackGain,
    options: &SolverOptions,
) -> Result<LineSearchResult> {
    if !(descent < 0.0) {
        return Err(Error::Precondition(format!(
            "line search needs a descent direction, got derivative {descent:.3e}"
        )));
    }
    let h0 = problem.cost_of(xi.curve());
    let mut gamma = 1.0;
    let mut last_trial = f64::NAN;
    while gamma >= options.gamma_min {
        let trial = match project(&xi.curve().axpy(gamma, zeta), gain, problem.model.as_ref()) {
            Ok(t) => problem.cost_of(t.curve()),
            Err(Error::ProjectionDivergence { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        last_trial = trial;
        if trial <= h0 + options.armijo_alpha * gamma * descent {
            return Ok(LineSearchResult { gamma, merit: trial });
        }
        gamma *= options.backtrack_beta;
    }
    Err(Error::LineSearch {
        gamma_min: options.gamma_min,
        cost: h0,
        descent,
        last_trial,
    })
}

/// Runs fsPRONTO from `guess`. Every recorded iterate is a certified trajectory
/// meeting the terminal constraint.
pub fn solve(problem: &Problem, guess: &Curve, options: &SolverOptions) -> Result<SolveOutcome> {
    solve_with(problem, guess, options, &mut |_, _| {})
}

/// [`solve`], calling `on_iterate` with each record and its iterate.
pub fn solve_with(
    problem: &Problem,
    guess: &Curve,
    options: &SolverOptions,
    on_iterate: &mut dyn FnMut(&IterationRecord, &Trajectory),
) -> Result<SolveOutcome> {
    options.validate()?;
    let model = problem.model.as_ref();
    let (n, m) = (model.state_dim(), model.input_dim());
    let (qk, rk) = options.gain_weights(n, m);
    let proj_opts = options.projection_options();
    let (mut xi, mut gain, mut inner) = initial_trajectory(problem, guess, options)?;
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut gamma_prev = None;

    let fail = |iteration: usize, e: Error, last: &Trajectory, history: &[IterationRecord]| Error::Solver {
        iteration,
        source: Box::new(e),
        last: Box::new(last.clone()),
        history: history.to_vec(),
    };

    for i in 0..=options.max_outer_iter {
        if options.gain_redesign_period > 0 && i % options.gain_redesign_period == 0 {
            gain = design_gain(xi.curve(), model, &qk, &rk).map_err(|e| fail(i, e, &xi, &history))?;
        }
        let desc = descent_direction(&xi, problem, options).map_err(|e| fail(i, e, &xi, &history))?;
        let cost = problem.cost_of(xi.curve());
        history.push(IterationRecord {
            index: i,
            cost,
            descent: desc.value,
            descent_abs: desc.value.abs(),
            gamma: gamma_prev,
            terminal_error: xi.terminal_error().unwrap_or(f64::NAN),
            dynamics_residual: xi.dynamics_residual(),
            projection_iterations: inner,
            hessian_mode: desc.mode,
        });
        log::info!(
            "iter {i:3}  cost {cost:.10e}  descent {:+.3e}  terminal {:.1e}  mode {:?}",
            desc.value,
            xi.terminal_error().unwrap_or(f64::NAN),
            desc.mode
        );
        on_iterate(history.last().unwrap(), &xi);
        if desc.value.abs() < options.descent_tol {
            return Ok(SolveOutcome {
                trajectory: xi,
                history,
                status: SolveStatus::Converged,
                gain,
            });
        }
        if i == options.max_outer_iter {
            break;
        }
        let step = line_search(&xi, &desc.zeta, desc.value, problem, &gain, options).map_err(|e| fail(i, e, &xi, &history))?;
        let (next, report) = constrained_project(&xi.curve().axpy(step.gamma, &desc.zeta), &problem.x_t, &gain, model, &proj_opts)
            .map_err(|e| fail(i, e, &xi, &history))?;
        let next_cost = problem.cost_of(next.curve());
        let bound = cost + options.armijo_alpha * step.gamma * desc.value + projection_drift(cost);
        if next_cost > bound {
            let e = Error::MonotoneDescent {
                previous: cost,
                next: next_cost,
                bound,
            };
            return Err(fail(i, e, &xi, &history));
        }
        xi = next;
        inner = report.iterations;
        gamma_prev = Some(step.gamma);
    }
    Ok(SolveOutcome {
        trajectory: xi,
        history,
        status: SolveStatus::MaxIterations,
        gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::QuadraticTrackingCost;
    use crate::grid::Signal;
    use crate::model::{LinearModel, PendulumModel};
    use crate::transcription::step_jacobians;
    use nalgebra::{dmatrix, dvector};

    fn oscillator(nodes: usize) -> Problem {
        let grid = TimeGrid::new(2.0, nodes).unwrap();
        let model = LinearModel::new(dmatrix![0.0, 1.0; -1.0, 0.0], dmatrix![0.0; 1.0]).unwrap();
        let x_d = Signal::from_fn(grid, |_, t| dvector![t.sin(), 0.0]).unwrap();
        let cost = QuadraticTrackingCost::new(DMatrix::identity(2, 2), dmatrix![0.1], x_d, Signal::constant(grid, dvector![0.0])).unwrap();
        Problem::new(Arc::new(model), Arc::new(cost), dvector![1.0, 0.0], dvector![0.0, 0.5], grid).unwrap()
    }

    fn pendulum(nodes: usize) -> Problem {
        let grid = TimeGrid::new(2.0, nodes).unwrap();
        let cost = QuadraticTrackingCost::new(
            dmatrix![10.0, 0.0; 0.0, 1.0],
            dmatrix![1.0],
            Signal::constant(grid, dvector![0.0, 0.0]),
            Signal::constant(grid, dvector![0.0]),
        )
        .unwrap();
        Problem::new(Arc::new(PendulumModel::default()), Arc::new(cost), dvector![0.4, 0.0], dvector![0.0, 0.0], grid).unwrap()
    }

    #[test]
    fn linear_quadratic_problem_converges_in_one_newton_step() {
        let p = oscillator(201);
        let out = solve(&p, &p.straight_line_guess(), &SolverOptions::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Converged);
        assert!(out.history.len() <= 3, "{:?}", out.history);
        assert_eq!(out.history[1].gamma, Some(1.0));
        assert!(out.history.iter().all(|r| r.terminal_error < 1e-8));
    }

    #[test]
    fn descent_direction_is_tangent_and_pinned() {
        let p = pendulum(101);
        let (xi, _, _) = initial_trajectory(&p, &p.straight_line_guess(), &SolverOptions::default()).unwrap();
        let d = descent_direction(&xi, &p, &SolverOptions::default()).unwrap();
        assert!(d.value < 0.0);
        let (zs, vs) = (d.zeta.alpha.values(), d.zeta.mu.values());
        assert!(zs[0].norm() < 1e-14);
        assert!(zs.last().unwrap().norm() < 1e-9);
        let (xs, us) = (xi.states().values(), xi.inputs().values());
        for k in 0..p.grid.n_steps() {
            let (phi, gamma) = step_jacobians(p.model.as_ref(), &xs[k], &us[k], p.grid.step(k));
            assert!((&zs[k + 1] - phi * &zs[k] - gamma * &vs[k]).norm() < 1e-10);
        }
        assert!((directional_derivative(&p, &xi, &d.zeta) - d.value).abs() < 1e-12);
    }

    #[test]
    fn newton_model_is_used_near_the_optimum() {
        let p = pendulum(101);
        let opts = SolverOptions {
            hessian_mode: HessianMode::Newton,
            ..Default::default()
        };
        let out = solve(&p, &p.straight_line_guess(), &opts).unwrap();
        assert_eq!(out.status, SolveStatus::Converged);
        assert_eq!(out.history.last().unwrap().hessian_mode, HessianMode::Newton);
    }

    #[test]
    fn line_search_takes_full_step_on_quadratics_and_rejects_ascent() {
        let p = oscillator(101);
        let opts = SolverOptions::default();
        let (xi, gain, _) = initial_trajectory(&p, &p.straight_line_guess(), &opts).unwrap();
        let d = descent_direction(&xi, &p, &opts).unwrap();
        let ls = line_search(&xi, &d.zeta, d.value, &p, &gain, &opts).unwrap();
        assert_eq!(ls.gamma, 1.0);
        assert!(ls.merit < p.cost_of(xi.curve()));
        assert!(matches!(
            line_search(&xi, &d.zeta, -d.value, &p, &gain, &opts),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn iteration_cap_returns_feasible_iterate() {
        let p = pendulum(101);
        let opts = SolverOptions {
            max_outer_iter: 0,
            ..Default::default()
        };
        let out = solve(&p, &p.straight_line_guess(), &opts).unwrap();
        assert_eq!(out.status, SolveStatus::MaxIterations);
        assert_eq!(out.history.len(), 1);
        assert!(out.trajectory.terminal_error().unwrap() < 1e-8);
    }

    #[test]
    fn invalid_options_and_guesses_are_rejected() {
        let p = oscillator(51);
        let bad = SolverOptions {
            armijo_alpha: 0.7,
            ..Default::default()
        };
        assert!(matches!(solve(&p, &p.straight_line_guess(), &bad), Err(Error::Config { .. })));
        let mut guess = p.straight_line_guess();
        guess.alpha = guess.alpha.map(|_, x| x.add_scalar(0.1)).unwrap();
        assert!(matches!(
            initial_trajectory(&p, &guess, &SolverOptions::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn every_iterate_is_reported() {
        let p = pendulum(101);
        let mut seen = Vec::new();
        let out = solve_with(&p, &p.straight_line_guess(), &SolverOptions::default(), &mut |r, xi| {
            seen.push((r.index, xi.terminal_error().unwrap()));
        })
        .unwrap();
        assert_eq!(seen.len(), out.history.len());
        assert!(seen.iter().enumerate().all(|(i, &(k, e))| i == k && e < 1e-8));
        let costs: Vec<f64> = out.history.iter().map(|r| r.cost).collect();
        assert!(costs.windows(2).all(|w| w[1] <= w[0] + projection_drift(w[0])));
    }
}
