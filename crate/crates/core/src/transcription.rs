//! Sampled-data transcription shared by every trajectory, tangent curve and LQ subproblem.
//!
//! On each grid step the input is held at its left-node value and the state
//! advances by one classical RK4 step. The running cost over the step is the
//! RK4 stage quadrature `h/6 * sum_i w_i l(Y_i, u, t + c_i h)`. The functions
//! here differentiate that map exactly (first and second order), so the LQ
//! subproblems are exact local models of what the projection computes.

use nalgebra::{DMatrix, DVector};

use crate::cost::RunningCost;
use crate::grid::rk4_step;
use crate::linalg::block2;
use crate::model::{stacked_jacobian, DynamicsModel};

pub const RK4_WEIGHTS: [f64; 4] = [1.0, 2.0, 2.0, 1.0];
/// Stage time offsets as fractions of the step.
pub const RK4_NODES: [f64; 4] = [0.0, 0.5, 0.5, 1.0];

/// State after one held-input step of size `h`.
pub fn step(model: &dyn DynamicsModel, x: &DVector<f64>, u: &DVector<f64>, h: f64) -> DVector<f64> {
    rk4_step(&mut |_, y: &DVector<f64>| model.eval_f(y, u), 0.0, x, h)
}

/// RK4 stage states `Y_1..Y_4`, computed with the same arithmetic as [`step`].
pub fn stage_states(
    model: &dyn DynamicsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> [DVector<f64>; 4] {
    let y1 = x.clone();
    let k1 = model.eval_f(&y1, u);
    let y2 = x + &k1 * (0.5 * h);
    let k2 = model.eval_f(&y2, u);
    let y3 = x + &k2 * (0.5 * h);
    let k3 = model.eval_f(&y3, u);
    let y4 = x + &k3 * h;
    [y1, y2, y3, y4]
}

/// Cost of one step starting at `(x, t)` with held input `u`.
pub fn step_cost(
    model: &dyn DynamicsModel,
    cost: &dyn RunningCost,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    h: f64,
) -> f64 {
    let ys = stage_states(model, x, u, h);
    let mut sum = 0.0;
    for i in 0..4 {
        sum += RK4_WEIGHTS[i] * cost.eval(&ys[i], u, t + RK4_NODES[i] * h);
    }
    sum * h / 6.0
}

/// Data one stage contributes to a step expansion.
///
/// `a`, `b` are the stage Jacobians; `hess` is the `(x, u)` Hessian of the
/// integrand and `grad` its gradient at the stage point.
pub(crate) struct StageData {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub hess: Option<DMatrix<f64>>,
    pub grad: Option<DVector<f64>>,
}

/// First-order expansion of one step: `x+ ~ phi z + gamma v` and the step cost
/// `~ 1/2 [z;v]' [q s; s' r] [z;v] + a'z + b'v`.
///
/// The quadratic blocks are the Gauss-Newton part (cost curvature only).
#[derive(Debug, Clone, PartialEq)]
pub struct StepExpansion {
    pub phi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub a: DVector<f64>,
    pub b: DVector<f64>,
}

impl StepExpansion {
    /// Full `(x, u)` Hessian of the step cost.
    pub fn hessian(&self) -> DMatrix<f64> {
        block2(&self.q, &self.s, &self.s.transpose(), &self.r)
    }

    pub(crate) fn set_hessian(&mut self, hess: &DMatrix<f64>) {
        let n = self.phi.nrows();
        let m = self.gamma.ncols();
        self.q = hess.view((0, 0), (n, n)).into_owned();
        self.s = hess.view((0, n), (n, m)).into_owned();
        self.r = hess.view((n, n), (m, m)).into_owned();
    }
}

/// `[I 0]`, the Jacobian of `Y_1 = x` with respect to `(x, u)`.
fn state_selector(n: usize, m: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, n + m);
    e.view_mut((0, 0), (n, n)).fill_with_identity();
    e
}

/// Jacobian of the stage point `(Y_i, u)` with respect to `(x, u)`.
fn stage_point_jacobian(jy: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let (n, d) = jy.shape();
    let mut out = DMatrix::zeros(d, d);
    out.view_mut((0, 0), (n, d)).copy_from(jy);
    out.view_mut((n, n), (m, m)).fill_with_identity();
    out
}

/// Chains stage data through the RK4 recurrences.
pub(crate) fn assemble(n: usize, m: usize, h: f64, stages: &[StageData; 4]) -> StepExpansion {
    let d = n + m;
    let base = state_selector(n, m);
    let mut jy = base.clone();
    let mut jplus = base.clone();
    let mut hess = DMatrix::zeros(d, d);
    let mut grad = DVector::zeros(d);
    for i in 0..4 {
        let st = &stages[i];
        let cw = h / 6.0 * RK4_WEIGHTS[i];
        if st.hess.is_some() || st.grad.is_some() {
            let dpt = stage_point_jacobian(&jy, m);
            if let Some(l2) = &st.hess {
                hess += dpt.transpose() * l2 * &dpt * cw;
            }
            if let Some(g) = &st.grad {
                grad += dpt.transpose() * g * cw;
            }
        }
        let mut jk = &st.a * &jy;
        let mut ju = jk.columns_mut(n, m);
        ju += &st.b;
        jplus += &jk * cw;
        if i < 3 {
            jy = &base + jk * (RK4_NODES[i + 1] * h);
        }
    }
    let hess = crate::linalg::symmetrize(&hess);
    StepExpansion {
        phi: jplus.columns(0, n).into_owned(),
        gamma: jplus.columns(n, m).into_owned(),
        q: hess.view((0, 0), (n, n)).into_owned(),
        s: hess.view((0, n), (n, m)).into_owned(),
        r: hess.view((n, n), (m, m)).into_owned(),
        a: grad.rows(0, n).into_owned(),
        b: grad.rows(n, m).into_owned(),
    }
}

/// Exact step Jacobians `(phi, gamma)` of the held-input step.
pub fn step_jacobians(
    model: &dyn DynamicsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let e = expand_step(model, None, x, u, 0.0, h);
    (e.phi, e.gamma)
}

/// Exact first-order expansion of one step and of its cost (when given).
pub fn expand_step(
    model: &dyn DynamicsModel,
    cost: Option<&dyn RunningCost>,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    h: f64,
) -> StepExpansion {
    expand_step_with(model, x, u, t, h, |y, tau| {
        cost.map(|c| {
            let (lxx, lxu, luu) = c.hessian(y, u, tau);
            let (lx, lu) = c.gradient(y, u, tau);
            (block2(&lxx, &lxu, &lxu.transpose(), &luu), crate::linalg::stack(&lx, &lu))
        })
    })
}

/// Step expansion for a constant `(x, u)` weight and no linear term, as used by
/// gain design and minimum-norm corrections.
pub fn expand_step_weighted(
    model: &dyn DynamicsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
    weight: &DMatrix<f64>,
) -> StepExpansion {
    let d = weight.nrows();
    expand_step_with(model, x, u, 0.0, h, |_, _| Some((weight.clone(), DVector::zeros(d))))
}

fn expand_step_with(
    model: &dyn DynamicsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    h: f64,
    mut stage_cost: impl FnMut(&DVector<f64>, f64) -> Option<(DMatrix<f64>, DVector<f64>)>,
) -> StepExpansion {
    let (n, m) = (model.state_dim(), model.input_dim());
    let ys = stage_states(model, x, u, h);
    let stages = std::array::from_fn(|i| {
        let y = &ys[i];
        let (hess, grad) = match stage_cost(y, t + RK4_NODES[i] * h) {
            Some((hs, g)) => (Some(hs), Some(g)),
            None => (None, None),
        };
        StageData {
            a: model.eval_fx(y, u),
            b: model.eval_fu(y, u),
            hess,
            grad,
        }
    });
    assemble(n, m, h, &stages)
}

/// Second-order terms of the step Lagrangian `c(x, u) + lambda' x+(x, u)` that
/// the Gauss-Newton blocks omit: the curvature of the stage states weighted by
/// the cost gradient, plus `lambda` times the curvature of the step map.
pub fn step_curvature(
    model: &dyn DynamicsModel,
    cost: &dyn RunningCost,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    h: f64,
    lambda_next: &DVector<f64>,
) -> DMatrix<f64> {
    let (n, m) = (model.state_dim(), model.input_dim());
    let d = n + m;
    let ys = stage_states(model, x, u, h);
    let base = state_selector(n, m);
    let mut jy = base.clone();
    // Second derivatives of each component of the current stage state.
    let mut hy: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d); n];
    let mut hplus: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d); n];
    let mut out = DMatrix::zeros(d, d);
    for i in 0..4 {
        let y = &ys[i];
        let tau = t + RK4_NODES[i] * h;
        let cw = h / 6.0 * RK4_WEIGHTS[i];
        let (lx, _) = cost.gradient(y, u, tau);
        for e in 0..n {
            out += &hy[e] * (cw * lx[e]);
        }
        let dpt = stage_point_jacobian(&jy, m);
        let fx = model.eval_fx(y, u);
        let f2 = model.eval_hessians(y, u);
        let hk: Vec<DMatrix<f64>> = (0..n)
            .map(|e| {
                let mut acc = dpt.transpose() * &f2[e] * &dpt;
                for (j, hyj) in hy.iter().enumerate() {
                    if fx[(e, j)] != 0.0 {
                        acc += hyj * fx[(e, j)];
                    }
                }
                acc
            })
            .collect();
        for e in 0..n {
            hplus[e] += &hk[e] * cw;
        }
        if i < 3 {
            let jk = stacked_jacobian(model, y, u) * &dpt;
            let c = RK4_NODES[i + 1] * h;
            jy = &base + jk * c;
            hy = hk.into_iter().map(|mtx| mtx * c).collect();
        }
    }
    for e in 0..n {
        out += &hplus[e] * lambda_next[e];
    }
    crate::linalg::symmetrize(&out)
}

/// `max_k |x_{k+1} - step(x_k, u_k)|` over a sampled state/input pair.
pub fn dynamics_residual(
    model: &dyn DynamicsModel,
    xs: &[DVector<f64>],
    us: &[DVector<f64>],
    h: f64,
) -> f64 {
    xs.windows(2)
        .zip(us)
        .map(|(w, u)| (&w[1] - step(model, &w[0], u, h)).norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::QuadraticTrackingCost;
    use crate::grid::{Signal, TimeGrid};
    use crate::model::PendulumModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn tracking_cost() -> QuadraticTrackingCost {
        let grid = TimeGrid::new(1.0, 11).unwrap();
        QuadraticTrackingCost::new(
            DMatrix::from_row_slice(2, 2, &[100.0, 0.0, 0.0, 1.0]),
            DMatrix::from_element(1, 1, 1.0),
            Signal::from_fn(grid, |_, t| v(&[0.3 * t, -0.2])).unwrap(),
            Signal::from_fn(grid, |_, t| v(&[t])).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn step_matches_generic_rk4() {
        let p = PendulumModel::default();
        let (x, u) = (v(&[0.4, -0.3]), v(&[1.2]));
        let ys = stage_states(&p, &x, &u, 0.05);
        let ks: Vec<_> = ys.iter().map(|y| p.eval_f(y, &u)).collect();
        let manual = &x + (&ks[0] + &ks[1] * 2.0 + &ks[2] * 2.0 + &ks[3]) * (0.05 / 6.0);
        assert_eq!(step(&p, &x, &u, 0.05), manual);
    }

    #[test]
    fn expansion_matches_differences() {
        let p = PendulumModel::default();
        let cost = tracking_cost();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 0.1;
        for _ in 0..10 {
            let x = v(&[rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0)]);
            let u = v(&[rng.random_range(-4.0..4.0)]);
            let t = rng.random_range(0.0..0.9);
            let e = expand_step(&p, Some(&cost), &x, &u, t, h);
            let eps = 1e-6;
            for j in 0..3 {
                let (mut xp, mut up, mut xm, mut um) = (x.clone(), u.clone(), x.clone(), u.clone());
                if j < 2 {
                    xp[j] += eps;
                    xm[j] -= eps;
                } else {
                    up[0] += eps;
                    um[0] -= eps;
                }
                let col = (step(&p, &xp, &up, h) - step(&p, &xm, &um, h)) / (2.0 * eps);
                let exact = if j < 2 { e.phi.column(j).into_owned() } else { e.gamma.column(0).into_owned() };
                assert!((col - exact).amax() < 1e-7);
                let dc = (step_cost(&p, &cost, &xp, &up, t, h) - step_cost(&p, &cost, &xm, &um, t, h)) / (2.0 * eps);
                let g = if j < 2 { e.a[j] } else { e.b[0] };
                assert!((dc - g).abs() < 1e-6 * (1.0 + g.abs()));
            }
        }
    }

    #[test]
    fn full_hessian_matches_differences() {
        let p = PendulumModel::default();
        let cost = tracking_cost();
        let (x, u, t, h) = (v(&[0.8, 0.5]), v(&[-1.5]), 0.2, 0.1);
        let lambda = v(&[0.7, -1.3]);
        let grad = |x: &DVector<f64>, u: &DVector<f64>| {
            let e = expand_step(&p, Some(&cost), x, u, t, h);
            let mut g = crate::linalg::stack(&e.a, &e.b);
            g += crate::linalg::stack(&(e.phi.transpose() * &lambda), &(e.gamma.transpose() * &lambda));
            g
        };
        let e = expand_step(&p, Some(&cost), &x, &u, t, h);
        let exact = e.hessian() + step_curvature(&p, &cost, &x, &u, t, h, &lambda);
        let eps = 1e-6;
        for j in 0..3 {
            let (mut xp, mut up, mut xm, mut um) = (x.clone(), u.clone(), x.clone(), u.clone());
            if j < 2 {
                xp[j] += eps;
                xm[j] -= eps;
            } else {
                up[0] += eps;
                um[0] -= eps;
            }
            let col = (grad(&xp, &up) - grad(&xm, &um)) / (2.0 * eps);
            assert!((col - exact.column(j)).amax() < 1e-5 * (1.0 + exact.amax()));
        }
    }

    #[test]
    fn residual_is_zero_on_integrated_states() {
        let p = PendulumModel::default();
        let u = vec![v(&[0.5]); 5];
        let mut xs = vec![v(&[0.1, 0.0])];
        for k in 0..4 {
            let next = step(&p, &xs[k], &u[k], 0.01);
            xs.push(next);
        }
        assert_eq!(dynamics_residual(&p, &xs, &u, 0.01), 0.0);
    }
}
