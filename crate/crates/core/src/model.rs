//! Dynamics models `x' = f(x, u)`, their derivatives, and linearization along curves.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{MatrixSignal, Signal, TimeGrid};
use crate::projection::Curve;

/// Default step for central finite differences.
pub const FD_STEP: f64 = 1e-6;

/// A smooth, time-invariant control system on `R^n x R^m`.
pub trait DynamicsModel: Send + Sync + Debug {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    fn eval_f(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn eval_fx(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    fn eval_fu(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;

    /// Hessian of each component `f_i` with respect to the stacked `(x, u)`.
    ///
    /// The default differentiates the Jacobians numerically.
    fn eval_hessians(&self, x: &DVector<f64>, u: &DVector<f64>) -> Vec<DMatrix<f64>> {
        fd_hessians(self, x, u, FD_STEP)
    }

    fn name(&self) -> &str {
        "model"
    }
}

/// `[f_x f_u]`, the Jacobian with respect to the stacked `(x, u)`.
pub fn stacked_jacobian<M: DynamicsModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> DMatrix<f64> {
    let (n, m) = (model.state_dim(), model.input_dim());
    let mut j = DMatrix::zeros(n, n + m);
    j.columns_mut(0, n).copy_from(&model.eval_fx(x, u));
    j.columns_mut(n, m).copy_from(&model.eval_fu(x, u));
    j
}

fn fd_hessians<M: DynamicsModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> Vec<DMatrix<f64>> {
    let (n, m) = (model.state_dim(), model.input_dim());
    let d = n + m;
    let mut out = vec![DMatrix::zeros(d, d); n];
    for j in 0..d {
        let (mut xp, mut up) = (x.clone(), u.clone());
        let (mut xm, mut um) = (x.clone(), u.clone());
        if j < n {
            xp[j] += h;
            xm[j] -= h;
        } else {
            up[j - n] += h;
            um[j - n] -= h;
        }
        let dj = (stacked_jacobian(model, &xp, &up) - stacked_jacobian(model, &xm, &um)) / (2.0 * h);
        for (i, hess) in out.iter_mut().enumerate() {
            for c in 0..d {
                hess[(c, j)] = dj[(i, c)];
            }
        }
    }
    for hess in &mut out {
        *hess = crate::linalg::symmetrize(hess);
    }
    out
}

/// Inverted pendulum on an accelerated pivot:
/// `x1' = x2`, `x2' = (g/L) sin x1 - (u/L) cos x1`, with `x1 = 0` upright.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumModel {
    length: f64,
    gravity: f64,
}

impl PendulumModel {
    pub fn new(length: f64, gravity: f64) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::config("params.L", format!("pendulum length must be positive, got {length}")));
        }
        if !gravity.is_finite() {
            return Err(Error::config("params.g", "gravity must be finite"));
        }
        Ok(Self { length, gravity })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn gravity(&self) -> f64 {
        self.gravity
    }

    /// Swing-up guess on `grid` from `x0`: energy pumping with a saturated input,
    /// then a linear catch controller once the pendulum is near upright.
    ///
    /// Both initial swing directions are simulated, and the first one caught at
    /// `x1 = 0` (rather than another multiple of `2 pi`) is returned.
    pub fn swing_up_guess(&self, grid: TimeGrid, x0: &DVector<f64>) -> Result<Curve> {
        if x0.len() != 2 {
            return Err(Error::dimension("x0", 2, x0.len()));
        }
        let first = self.simulate_swing_up(grid, x0, 1.0)?;
        if first.alpha.last()[0].abs() < std::f64::consts::PI {
            return Ok(first);
        }
        let second = self.simulate_swing_up(grid, x0, -1.0)?;
        if second.alpha.last()[0].abs() < first.alpha.last()[0].abs() {
            Ok(second)
        } else {
            Ok(first)
        }
    }

    fn simulate_swing_up(&self, grid: TimeGrid, x0: &DVector<f64>, kick: f64) -> Result<Curve> {
        use std::f64::consts::PI;
        let (l, g) = (self.length, self.gravity);
        let e_top = g / l;
        let u_max = 0.5 * g;
        // Catch gains place both linearized poles at -a.
        let a = 4.0;
        let (k1, k2) = (g + a * a * l, 2.0 * a * l);
        let mut x = x0.clone();
        let mut xs = Vec::with_capacity(grid.n_nodes());
        let mut us = Vec::with_capacity(grid.n_nodes());
        xs.push(x.clone());
        let mut caught = false;
        for k in 0..grid.n_steps() {
            let wrapped = (x[0] + PI).rem_euclid(2.0 * PI) - PI;
            caught |= wrapped.abs() < 0.5 && x[1].abs() < 3.0;
            let u = if caught {
                k1 * wrapped + k2 * x[1]
            } else {
                let energy = 0.5 * x[1] * x[1] + e_top * x[0].cos();
                let pump = -3.0 * (e_top - energy) * x[1] * x[0].cos();
                let u = if pump.abs() < 1e-9 { kick * u_max } else { pump };
                u.clamp(-u_max, u_max)
            };
            let u = DVector::from_element(1, u);
            x = crate::transcription::step(self, &x, &u, grid.step(k));
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::BlowUp { t: grid.node(k + 1) });
            }
            xs.push(x.clone());
            us.push(u);
        }
        us.push(us.last().cloned().unwrap_or_else(|| DVector::zeros(1)));
        Curve::new(Signal::new(grid, xs)?, Signal::new(grid, us)?)
    }
}

impl Default for PendulumModel {
    fn default() -> Self {
        Self {
            length: 0.5,
            gravity: 9.81,
        }
    }
}

impl DynamicsModel for PendulumModel {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn eval_f(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (s, c) = x[0].sin_cos();
        DVector::from_vec(vec![
            x[1],
            self.gravity / self.length * s - u[0] / self.length * c,
        ])
    }

    fn eval_fx(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let (s, c) = x[0].sin_cos();
        DMatrix::from_row_slice(
            2,
            2,
            &[0.0, 1.0, self.gravity / self.length * c + u[0] / self.length * s, 0.0],
        )
    }

    fn eval_fu(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[0.0, -x[0].cos() / self.length])
    }

    fn eval_hessians(&self, x: &DVector<f64>, u: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let (s, c) = x[0].sin_cos();
        let l = self.length;
        let mut h2 = DMatrix::zeros(3, 3);
        h2[(0, 0)] = -self.gravity / l * s + u[0] / l * c;
        h2[(0, 2)] = s / l;
        h2[(2, 0)] = s / l;
        vec![DMatrix::zeros(3, 3), h2]
    }

    fn name(&self) -> &str {
        "pendulum"
    }
}

/// Time-invariant linear system `x' = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dimension("A", "square", format!("{}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::dimension("B rows", a.nrows(), b.nrows()));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
}

impl DynamicsModel for LinearModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn eval_f(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    fn eval_fx(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }

    fn eval_fu(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.b.clone()
    }

    fn eval_hessians(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let d = self.state_dim() + self.input_dim();
        vec![DMatrix::zeros(d, d); self.state_dim()]
    }

    fn name(&self) -> &str {
        "linear"
    }
}

/// Wraps a bare vector field and supplies central-difference Jacobians.
pub struct FiniteDifferenceModel<F> {
    n: usize,
    m: usize,
    f: F,
    step: f64,
}

impl<F> FiniteDifferenceModel<F>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync,
{
    pub fn new(n: usize, m: usize, f: F) -> Self {
        Self { n, m, f, step: FD_STEP }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }
}

impl<F> Debug for FiniteDifferenceModel<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FiniteDifferenceModel")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("step", &self.step)
            .finish()
    }
}

impl<F> DynamicsModel for FiniteDifferenceModel<F>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync,
{
    fn state_dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        self.m
    }

    fn eval_f(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.f)(x, u)
    }

    fn eval_fx(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.n, self.n);
        for c in 0..self.n {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[c] += self.step;
            xm[c] -= self.step;
            j.set_column(c, &(((self.f)(&xp, u) - (self.f)(&xm, u)) / (2.0 * self.step)));
        }
        j
    }

    fn eval_fu(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.n, self.m);
        for c in 0..self.m {
            let (mut up, mut um) = (u.clone(), u.clone());
            up[c] += self.step;
            um[c] -= self.step;
            j.set_column(c, &(((self.f)(x, &up) - (self.f)(x, &um)) / (2.0 * self.step)));
        }
        j
    }

    fn eval_hessians(&self, x: &DVector<f64>, u: &DVector<f64>) -> Vec<DMatrix<f64>> {
        // Differencing numerical Jacobians needs a coarser step to stay above roundoff.
        fd_hessians(self, x, u, 1e-4)
    }
}

/// Worst entry-wise relative error between the analytic Jacobians and central
/// differences of `eval_f` with step `h`. Entries are scaled by `max(1, |fd|)`.
pub fn jacobian_check<M: DynamicsModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> f64 {
    let analytic = stacked_jacobian(model, x, u);
    let (n, m) = (model.state_dim(), model.input_dim());
    let mut worst: f64 = 0.0;
    for j in 0..n + m {
        let (mut xp, mut up) = (x.clone(), u.clone());
        let (mut xm, mut um) = (x.clone(), u.clone());
        if j < n {
            xp[j] += h;
            xm[j] -= h;
        } else {
            up[j - n] += h;
            um[j - n] -= h;
        }
        // Divide by the step actually taken, which differs from 2h by rounding.
        let taken = if j < n { xp[j] - xm[j] } else { up[j - n] - um[j - n] };
        let col = (model.eval_f(&xp, &up) - model.eval_f(&xm, &um)) / taken;
        for i in 0..n {
            let err = (analytic[(i, j)] - col[i]).abs() / col[i].abs().max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

/// Node-sampled Jacobians `A(t_k) = f_x`, `B(t_k) = f_u` along a curve.
#[derive(Debug, Clone, PartialEq)]
pub struct LtvData {
    pub a: MatrixSignal,
    pub b: MatrixSignal,
}

impl LtvData {
    pub fn new(a: MatrixSignal, b: MatrixSignal) -> Result<Self> {
        if a.grid() != b.grid() {
            return Err(Error::dimension("LTV grid", "A and B on one grid", "different grids"));
        }
        let (n, n2) = a.shape();
        if n != n2 {
            return Err(Error::dimension("A", "square", format!("{n}x{n2}")));
        }
        if b.shape().0 != n {
            return Err(Error::dimension("B rows", n, b.shape().0));
        }
        Ok(Self { a, b })
    }

    /// Constant matrices on `grid`.
    pub fn constant(grid: crate::grid::TimeGrid, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        Self::new(Signal::constant(grid, a), Signal::constant(grid, b))
    }

    pub fn state_dim(&self) -> usize {
        self.a.shape().0
    }

    pub fn input_dim(&self) -> usize {
        self.b.shape().1
    }
}

pub fn linearize_along<M: DynamicsModel + ?Sized>(model: &M, curve: &Curve) -> Result<LtvData> {
    let (xs, us) = (curve.alpha.values(), curve.mu.values());
    let a = Signal::new(
        curve.grid(),
        xs.iter().zip(us).map(|(x, u)| model.eval_fx(x, u)).collect(),
    )?;
    let b = Signal::new(
        curve.grid(),
        xs.iter().zip(us).map(|(x, u)| model.eval_fu(x, u)).collect(),
    )?;
    LtvData::new(a, b)
}
