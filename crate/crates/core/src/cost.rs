//! Running costs, the total cost functional, Hamiltonian curvature and costates.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{rk4_step, MatrixSignal, Signal, VectorSignal};
use crate::linalg;
use crate::model::DynamicsModel;
use crate::projection::Curve;
use crate::transcription;

/// Running cost `l(x, u, t)` with its first and second derivatives.
pub trait RunningCost: Send + Sync + Debug {
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> f64;
    /// `(l_x, l_u)`.
    fn gradient(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> (DVector<f64>, DVector<f64>);
    /// `(l_xx, l_xu, l_uu)`.
    fn hessian(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        t: f64,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);
}

/// `1/2 |x - x_d(t)|_Q^2 + 1/2 |u - u_d(t)|_R^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTrackingCost {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    x_d: VectorSignal,
    u_d: VectorSignal,
}

/// Smallest eigenvalue accepted for `R`.
pub const R_FLOOR: f64 = 1e-10;

impl QuadraticTrackingCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, x_d: VectorSignal, u_d: VectorSignal) -> Result<Self> {
        if q.nrows() != x_d.dim() || q.ncols() != x_d.dim() {
            return Err(Error::dimension("Q", format!("{0}x{0}", x_d.dim()), format!("{}x{}", q.nrows(), q.ncols())));
        }
        if r.nrows() != u_d.dim() || r.ncols() != u_d.dim() {
            return Err(Error::dimension("R", format!("{0}x{0}", u_d.dim()), format!("{}x{}", r.nrows(), r.ncols())));
        }
        if x_d.grid() != u_d.grid() {
            return Err(Error::dimension("desired curve grid", "x_d and u_d on one grid", "different grids"));
        }
        let q_floor = -1e-12 * (1.0 + q.amax());
        linalg::check_symmetric_definite(&q, q_floor)
            .map_err(|m| Error::InvalidWeight(format!("Q {m} (must be symmetric positive semidefinite)")))?;
        linalg::check_symmetric_definite(&r, R_FLOOR)
            .map_err(|m| Error::InvalidWeight(format!("R {m} (must be symmetric positive definite)")))?;
        if !x_d.is_finite() || !u_d.is_finite() {
            return Err(Error::InvalidWeight("desired curve has non-finite entries".into()));
        }
        Ok(Self { q, r, x_d, u_d })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn x_d(&self) -> &VectorSignal {
        &self.x_d
    }

    pub fn u_d(&self) -> &VectorSignal {
        &self.u_d
    }

    fn desired(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        let t = t.clamp(0.0, self.x_d.grid().tf());
        (
            self.x_d.interpolate(t).expect("clamped time"),
            self.u_d.interpolate(t).expect("clamped time"),
        )
    }
}

impl RunningCost for QuadraticTrackingCost {
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> f64 {
        let (xd, ud) = self.desired(t);
        let (dx, du) = (x - xd, u - ud);
        0.5 * dx.dot(&(&self.q * &dx)) + 0.5 * du.dot(&(&self.r * &du))
    }

    fn gradient(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> (DVector<f64>, DVector<f64>) {
        let (xd, ud) = self.desired(t);
        (&self.q * (x - xd), &self.r * (u - ud))
    }

    fn hessian(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _t: f64,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        (
            self.q.clone(),
            DMatrix::zeros(self.q.nrows(), self.r.nrows()),
            self.r.clone(),
        )
    }
}

/// `h(xi)`: the step-quadrature sum of the running cost along a curve.
///
/// Each step uses the held input `u_k` and the RK4 stage states started from
/// `x_k`, so for trajectories this is the cost of the integrated motion.
pub fn total_cost(cost: &dyn RunningCost, model: &dyn DynamicsModel, curve: &Curve) -> f64 {
    let grid = curve.grid();
    let (xs, us) = (curve.alpha.values(), curve.mu.values());
    (0..grid.n_steps())
        .map(|k| {
            let h = grid.step(k);
            transcription::step_cost(model, cost, &xs[k], &us[k], grid.node(k), h)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    #[default]
    GaussNewton,
    Newton,
}

impl std::str::FromStr for HessianMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss_newton" | "gauss-newton" => Ok(Self::GaussNewton),
            "newton" => Ok(Self::Newton),
            other => Err(Error::Parse(format!(
                "unknown hessian mode `{other}` (expected gauss_newton or newton)"
            ))),
        }
    }
}

/// Node-sampled local quadratic model: `a = l_x`, `b = l_u` and the weights `Q, S, R`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadApprox {
    pub a: VectorSignal,
    pub b: VectorSignal,
    pub q: MatrixSignal,
    pub s: MatrixSignal,
    pub r: MatrixSignal,
}

impl QuadApprox {
    /// All-zero data on `grid`, except `R`.
    pub fn zero_with_r(grid: crate::grid::TimeGrid, n: usize, r: DMatrix<f64>) -> Self {
        let m = r.nrows();
        Self {
            a: Signal::constant(grid, DVector::zeros(n)),
            b: Signal::constant(grid, DVector::zeros(m)),
            q: Signal::constant(grid, DMatrix::zeros(n, n)),
            s: Signal::constant(grid, DMatrix::zeros(n, m)),
            r: Signal::constant(grid, r),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Costate {
    pub p: VectorSignal,
}

/// Hessian blocks of `H = l(x, u, t) + p' f(x, u)`.
pub fn hamiltonian_hessian(
    model: &dyn DynamicsModel,
    cost: &dyn RunningCost,
    x: &DVector<f64>,
    u: &DVector<f64>,
    p: &DVector<f64>,
    t: f64,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = model.state_dim();
    let m = model.input_dim();
    let (mut hxx, mut hxu, mut huu) = cost.hessian(x, u, t);
    if p.iter().any(|&v| v != 0.0) {
        for (pi, f2) in p.iter().zip(model.eval_hessians(x, u)) {
            hxx += f2.view((0, 0), (n, n)) * *pi;
            hxu += f2.view((0, n), (n, m)) * *pi;
            huu += f2.view((n, n), (m, m)) * *pi;
        }
    }
    (linalg::symmetrize(&hxx), hxu, linalg::symmetrize(&huu))
}

/// Node-wise quadratic model along `curve`.
///
/// Gauss-Newton uses the cost Hessians; Newton uses the Hamiltonian Hessians
/// with the supplied costate and fails if `H_uu` is not positive definite.
pub fn quadratic_approximation(
    cost: &dyn RunningCost,
    model: &dyn DynamicsModel,
    curve: &Curve,
    mode: HessianMode,
    costate: Option<&Costate>,
) -> Result<QuadApprox> {
    let grid = curve.grid();
    let costate = match mode {
        HessianMode::GaussNewton => None,
        HessianMode::Newton => {
            let c = costate
                .ok_or_else(|| Error::Precondition("newton mode requires a costate".into()))?;
            if c.p.grid() != grid {
                return Err(Error::dimension("costate grid", "trajectory grid", "different grid"));
            }
            Some(c)
        }
    };
    let n = model.state_dim();
    let (mut a, mut b, mut q, mut s, mut r) = (vec![], vec![], vec![], vec![], vec![]);
    for k in 0..grid.n_nodes() {
        let (x, u, t) = (curve.alpha.at(k), curve.mu.at(k), grid.node(k));
        let (lx, lu) = cost.gradient(x, u, t);
        a.push(lx);
        b.push(lu);
        let p = match costate {
            Some(c) => c.p.at(k).clone(),
            None => DVector::zeros(n),
        };
        let (hxx, hxu, huu) = hamiltonian_hessian(model, cost, x, u, &p, t);
        if linalg::cholesky(&huu).is_none() {
            return Err(Error::Indefinite {
                what: "R".into(),
                node: k,
            });
        }
        q.push(hxx);
        s.push(hxu);
        r.push(huu);
    }
    Ok(QuadApprox {
        a: Signal::new(grid, a)?,
        b: Signal::new(grid, b)?,
        q: Signal::new(grid, q)?,
        s: Signal::new(grid, s)?,
        r: Signal::new(grid, r)?,
    })
}

/// Cubic Hermite interpolation on `[0, h]` at fraction `s`.
fn hermite(
    x0: &DVector<f64>,
    f0: &DVector<f64>,
    x1: &DVector<f64>,
    f1: &DVector<f64>,
    h: f64,
    s: f64,
) -> DVector<f64> {
    let s2 = s * s;
    let s3 = s2 * s;
    x0 * (2.0 * s3 - 3.0 * s2 + 1.0)
        + f0 * (h * (s3 - 2.0 * s2 + s))
        + x1 * (-2.0 * s3 + 3.0 * s2)
        + f1 * (h * (s3 - s2))
}

/// Integrates `-p' = f_x' p + l_x` backward from `p(T) = p_t` along a trajectory.
///
/// Within each step the input is the held node value and the state comes from
/// cubic Hermite dense output, so the error is fourth order in the step.
pub fn solve_costate(
    model: &dyn DynamicsModel,
    cost: &dyn RunningCost,
    traj: &Curve,
    p_t: &DVector<f64>,
) -> Result<Costate> {
    let n = model.state_dim();
    if p_t.len() != n {
        return Err(Error::dimension("p_T", n, p_t.len()));
    }
    let grid = traj.grid();
    let (xs, us) = (traj.alpha.values(), traj.mu.values());
    let mut ps = vec![p_t.clone(); grid.n_nodes()];
    for k in (0..grid.n_steps()).rev() {
        let (t0, t1) = (grid.node(k), grid.node(k + 1));
        let h = t1 - t0;
        let u = &us[k];
        let (x0, x1) = (&xs[k], &xs[k + 1]);
        let (f0, f1) = (model.eval_f(x0, u), model.eval_f(x1, u));
        let mut field = |t: f64, p: &DVector<f64>| {
            let x = hermite(x0, &f0, x1, &f1, h, ((t - t0) / h).clamp(0.0, 1.0));
            let (lx, _) = cost.gradient(&x, u, t);
            -(model.eval_fx(&x, u).transpose() * p + lx)
        };
        let prev = rk4_step(&mut field, t1, &ps[k + 1], -h);
        if !prev.iter().all(|v| v.is_finite()) {
            return Err(Error::BlowUp { t: t0 });
        }
        ps[k] = prev;
    }
    Ok(Costate {
        p: Signal::new(grid, ps)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::model::{LinearModel, PendulumModel};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn pendulum_cost(grid: TimeGrid) -> QuadraticTrackingCost {
        QuadraticTrackingCost::new(
            DMatrix::from_row_slice(2, 2, &[100.0, 0.0, 0.0, 1.0]),
            DMatrix::from_element(1, 1, 1.0),
            Signal::from_fn(grid, |_, t| v(&[(0.3 * t).sin(), 0.3 * (0.3 * t).cos()])).unwrap(),
            Signal::constant(grid, v(&[0.0])),
        )
        .unwrap()
    }

    #[test]
    fn running_cost_examples() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let c = QuadraticTrackingCost::new(
            DMatrix::from_row_slice(2, 2, &[100.0, 0.0, 0.0, 1.0]),
            DMatrix::from_element(1, 1, 1.0),
            Signal::constant(grid, v(&[1.0, 2.0])),
            Signal::constant(grid, v(&[3.0])),
        )
        .unwrap();
        assert_eq!(c.eval(&v(&[1.0, 2.0]), &v(&[3.0]), 0.4), 0.0);
        assert_abs_diff_eq!(c.eval(&v(&[1.1, 2.0]), &v(&[3.0]), 0.4), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_weights() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let xd = Signal::constant(grid, v(&[0.0, 0.0]));
        let ud = Signal::constant(grid, v(&[0.0]));
        let r = DMatrix::from_element(1, 1, 1.0);
        let indefinite_q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            QuadraticTrackingCost::new(indefinite_q, r.clone(), xd.clone(), ud.clone()),
            Err(Error::InvalidWeight(_))
        ));
        let q = DMatrix::identity(2, 2);
        assert!(matches!(
            QuadraticTrackingCost::new(q.clone(), DMatrix::zeros(1, 1), xd.clone(), ud.clone()),
            Err(Error::InvalidWeight(_))
        ));
        let err = QuadraticTrackingCost::new(DMatrix::identity(3, 3), r, xd, ud).unwrap_err();
        assert!(err.to_string().contains("Q"));
    }

    /// Cost with integrand `c + d t` independent of the state.
    #[derive(Debug)]
    struct Affine(f64, f64);

    impl RunningCost for Affine {
        fn eval(&self, _x: &DVector<f64>, _u: &DVector<f64>, t: f64) -> f64 {
            self.0 + self.1 * t
        }
        fn gradient(&self, x: &DVector<f64>, u: &DVector<f64>, _t: f64) -> (DVector<f64>, DVector<f64>) {
            (DVector::zeros(x.len()), DVector::zeros(u.len()))
        }
        fn hessian(&self, x: &DVector<f64>, u: &DVector<f64>, _t: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
            (
                DMatrix::zeros(x.len(), x.len()),
                DMatrix::zeros(x.len(), u.len()),
                DMatrix::zeros(u.len(), u.len()),
            )
        }
    }

    #[test]
    fn total_cost_quadrature_exactness() {
        let grid = TimeGrid::new(3.0, 7).unwrap();
        let model = PendulumModel::default();
        let curve = Curve::new(
            Signal::constant(grid, v(&[0.0, 0.0])),
            Signal::constant(grid, v(&[0.0])),
        )
        .unwrap();
        assert_abs_diff_eq!(total_cost(&Affine(2.5, 0.0), &model, &curve), 7.5, epsilon = 1e-12);
        assert_abs_diff_eq!(total_cost(&Affine(1.0, 2.0), &model, &curve), 3.0 + 9.0, epsilon = 1e-12);
    }

    #[test]
    fn total_cost_zero_on_desired_equilibrium() {
        let grid = TimeGrid::new(2.0, 21).unwrap();
        let cost = QuadraticTrackingCost::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
            Signal::constant(grid, v(&[0.0, 0.0])),
            Signal::constant(grid, v(&[0.0])),
        )
        .unwrap();
        let curve = Curve::new(cost.x_d().clone(), cost.u_d().clone()).unwrap();
        assert_eq!(total_cost(&cost, &PendulumModel::default(), &curve), 0.0);
    }

    #[test]
    fn hamiltonian_hessian_zero_costate_is_cost_hessian() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let cost = pendulum_cost(grid);
        let (hxx, hxu, huu) =
            hamiltonian_hessian(&PendulumModel::default(), &cost, &v(&[0.3, 0.1]), &v(&[0.5]), &v(&[0.0, 0.0]), 0.2);
        assert_eq!(hxx, *cost.q());
        assert_eq!(hxu, DMatrix::zeros(2, 1));
        assert_eq!(huu, *cost.r());
    }

    #[test]
    fn hamiltonian_hessian_matches_gradient_differences() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let cost = pendulum_cost(grid);
        let model = PendulumModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grad_h = |x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>| {
            let (lx, lu) = cost.gradient(x, u, 0.5);
            linalg::stack(
                &(lx + model.eval_fx(x, u).transpose() * p),
                &(lu + model.eval_fu(x, u).transpose() * p),
            )
        };
        for _ in 0..20 {
            let x = v(&[rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0)]);
            let u = v(&[rng.random_range(-5.0..5.0)]);
            let p = v(&[rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
            let (hxx, hxu, huu) = hamiltonian_hessian(&model, &cost, &x, &u, &p, 0.5);
            assert!(linalg::max_asymmetry(&hxx) == 0.0 && linalg::max_asymmetry(&huu) == 0.0);
            let full = linalg::block2(&hxx, &hxu, &hxu.transpose(), &huu);
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
                let col = (grad_h(&xp, &up, &p) - grad_h(&xm, &um, &p)) / (2.0 * eps);
                assert!((col - full.column(j)).amax() <= 1e-5 * (1.0 + full.amax()));
            }
        }
    }

    #[test]
    fn quadratic_approximation_modes() {
        let grid = TimeGrid::new(1.0, 11).unwrap();
        let cost = pendulum_cost(grid);
        let model = PendulumModel::default();
        let curve = Curve::new(
            Signal::from_fn(grid, |_, t| v(&[t, -t])).unwrap(),
            Signal::from_fn(grid, |_, t| v(&[t * t])).unwrap(),
        )
        .unwrap();
        let gn = quadratic_approximation(&cost, &model, &curve, HessianMode::GaussNewton, None).unwrap();
        for k in 0..11 {
            assert_eq!(*gn.q.at(k), *cost.q());
            assert_eq!(*gn.r.at(k), *cost.r());
            assert_eq!(*gn.s.at(k), DMatrix::zeros(2, 1));
            let xd = cost.x_d().at(k);
            assert_abs_diff_eq!(*gn.a.at(k), cost.q() * (curve.alpha.at(k) - xd), epsilon = 1e-12);
        }
        let zero = Costate {
            p: Signal::constant(grid, v(&[0.0, 0.0])),
        };
        let nt = quadratic_approximation(&cost, &model, &curve, HessianMode::Newton, Some(&zero)).unwrap();
        assert_eq!(nt, gn);
        assert!(quadratic_approximation(&cost, &model, &curve, HessianMode::Newton, None).is_err());

        let p = Costate {
            p: Signal::constant(grid, v(&[0.0, 1.0])),
        };
        let nt = quadratic_approximation(&cost, &model, &curve, HessianMode::Newton, Some(&p)).unwrap();
        for k in 0..11 {
            let (x1, u) = (curve.alpha.at(k)[0], curve.mu.at(k)[0]);
            let extra = -(9.81 / 0.5) * x1.sin() + u / 0.5 * x1.cos();
            assert_abs_diff_eq!(nt.q.at(k)[(0, 0)], 100.0 + extra, epsilon = 1e-12);
        }
    }

    #[test]
    fn costate_trivial_cases() {
        let grid = TimeGrid::new(1.0, 11).unwrap();
        let model = LinearModel::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)).unwrap();
        let curve = Curve::new(Signal::constant(grid, v(&[0.0])), Signal::constant(grid, v(&[0.0]))).unwrap();
        let zero_cost = Affine(0.0, 0.0);
        let c = solve_costate(&model, &zero_cost, &curve, &v(&[0.0])).unwrap();
        assert!(c.p.values().iter().all(|p| p[0] == 0.0));

        // l = x with x = 0 held: l_x = 1, so p(0) = 1.
        #[derive(Debug)]
        struct Linear;
        impl RunningCost for Linear {
            fn eval(&self, x: &DVector<f64>, _u: &DVector<f64>, _t: f64) -> f64 {
                x[0]
            }
            fn gradient(&self, _x: &DVector<f64>, _u: &DVector<f64>, _t: f64) -> (DVector<f64>, DVector<f64>) {
                (v(&[1.0]), v(&[0.0]))
            }
            fn hessian(&self, _x: &DVector<f64>, _u: &DVector<f64>, _t: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
                (DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), DMatrix::zeros(1, 1))
            }
        }
        let c = solve_costate(&model, &Linear, &curve, &v(&[0.0])).unwrap();
        assert_abs_diff_eq!(c.p.first()[0], 1.0, epsilon = 1e-12);
    }
}
