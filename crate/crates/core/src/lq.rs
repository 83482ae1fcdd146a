//! Time-varying LQ problems: optimal state transfer, terminal-penalty LQR, and a
//! dense KKT oracle.
//!
//! A continuous-data [`LqProblem`] is first transcribed into a [`DiscreteLq`]
//! (held inputs, RK4 steps, stage-quadrature cost). The sweep below is exact for
//! that transcription:
//!
//! ```text
//! H_k = R_k + G_k' P_{k+1} G_k       K_k = H_k^-1 (S_k' + G_k' P_{k+1} F_k)
//! P_k = Q_k + F_k' P_{k+1} F_k - K_k' H_k K_k
//! r_k = a_k + (F_k - G_k K_k)' r_{k+1} - K_k' b_k
//! v_k = -K_k z_k - H_k^-1 (b_k + G_k' r_{k+1})
//! ```
//!
//! where `F = phi`, `G = gamma`. For a fixed terminal state `P_N = 0` and
//! `r_N = p1`, the terminal multiplier obtained from the closed-loop Gramian.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::cost::QuadApprox;
use crate::error::{Error, Result};
use crate::grid::{MatrixSignal, Signal, TimeGrid, VectorSignal};
use crate::linalg::{self, block2, stack};
use crate::model::LtvData;
use crate::projection::Curve;
use crate::transcription::{assemble, StageData, StepExpansion, RK4_NODES};

/// Condition number of the terminal Gramian above which a transfer counts as uncontrollable.
pub const GRAMIAN_CONDITION_LIMIT: f64 = 1e12;

/// Largest grid accepted by [`kkt_oracle`].
pub const ORACLE_MAX_NODES: usize = 501;

#[derive(Debug, Clone, PartialEq)]
pub enum Terminal {
    /// `z(T) = x_T`.
    FixedState(DVector<f64>),
    /// Terminal cost `1/2 z(T)' p1 z(T) + r1' z(T)`.
    Penalty { p1: DMatrix<f64>, r1: DVector<f64> },
}

/// LQ problem with node-sampled continuous-time data.
#[derive(Debug, Clone, PartialEq)]
pub struct LqProblem {
    pub ltv: LtvData,
    pub quad: QuadApprox,
    pub x0: DVector<f64>,
    pub terminal: Terminal,
}

impl LqProblem {
    pub fn new(ltv: LtvData, quad: QuadApprox, x0: DVector<f64>, terminal: Terminal) -> Result<Self> {
        let grid = ltv.a.grid();
        let (n, m) = (ltv.state_dim(), ltv.input_dim());
        for (what, g) in [
            ("a", quad.a.grid()),
            ("b", quad.b.grid()),
            ("Q", quad.q.grid()),
            ("S", quad.s.grid()),
            ("R", quad.r.grid()),
        ] {
            if g != grid {
                return Err(Error::dimension(format!("{what} grid"), "the LTV grid", "a different grid"));
            }
        }
        let shapes = [
            ("a", quad.a.shape(), (n, 1)),
            ("b", quad.b.shape(), (m, 1)),
            ("Q", quad.q.shape(), (n, n)),
            ("S", quad.s.shape(), (n, m)),
            ("R", quad.r.shape(), (m, m)),
        ];
        for (what, got, want) in shapes {
            if got != want {
                return Err(Error::dimension(what, format!("{want:?}"), format!("{got:?}")));
            }
        }
        if x0.len() != n {
            return Err(Error::dimension("x0", n, x0.len()));
        }
        match &terminal {
            Terminal::FixedState(xt) if xt.len() != n => return Err(Error::dimension("x_T", n, xt.len())),
            Terminal::Penalty { p1, r1 } => {
                if p1.shape() != (n, n) {
                    return Err(Error::dimension("P1", format!("{n}x{n}"), format!("{}x{}", p1.nrows(), p1.ncols())));
                }
                if r1.len() != n {
                    return Err(Error::dimension("r1", n, r1.len()));
                }
                linalg::check_symmetric_definite(p1, -1e-12 * (1.0 + p1.amax()))
                    .map_err(|m| Error::InvalidWeight(format!("P1 {m} (must be symmetric positive semidefinite)")))?;
            }
            _ => {}
        }
        for (k, r) in quad.r.values().iter().enumerate() {
            if linalg::cholesky(r).is_none() {
                return Err(Error::Indefinite {
                    what: "R".into(),
                    node: k,
                });
            }
        }
        Ok(Self {
            ltv,
            quad,
            x0,
            terminal,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.ltv.a.grid()
    }

    /// Transcribes the continuous data, evaluating it at the RK4 stage times.
    pub fn discretize(&self) -> Result<DiscreteLq> {
        let grid = self.grid();
        let (n, m) = (self.ltv.state_dim(), self.ltv.input_dim());
        let mut steps = Vec::with_capacity(grid.n_steps());
        for k in 0..grid.n_steps() {
            let t = grid.node(k);
            let h = grid.step(k);
            let mut stages = Vec::with_capacity(4);
            for c in RK4_NODES {
                let tau = t + c * h;
                let q = self.quad.q.interpolate(tau)?;
                let s = self.quad.s.interpolate(tau)?;
                let r = self.quad.r.interpolate(tau)?;
                stages.push(StageData {
                    a: self.ltv.a.interpolate(tau)?,
                    b: self.ltv.b.interpolate(tau)?,
                    hess: Some(block2(&q, &s, &s.transpose(), &r)),
                    grad: Some(stack(&self.quad.a.interpolate(tau)?, &self.quad.b.interpolate(tau)?)),
                });
            }
            let stages: [StageData; 4] = stages.try_into().unwrap_or_else(|_| unreachable!());
            steps.push(assemble(n, m, h, &stages));
        }
        DiscreteLq::new(grid, steps, self.x0.clone(), self.terminal.clone())
    }
}

/// LQ problem over a sequence of exact step expansions.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLq {
    grid: TimeGrid,
    steps: Vec<StepExpansion>,
    x0: DVector<f64>,
    terminal: Terminal,
}

/// Feedback gains and factorizations from the backward Riccati pass.
#[derive(Debug, Clone)]
struct Sweep {
    p: Vec<DMatrix<f64>>,
    k: Vec<DMatrix<f64>>,
    h: Vec<Cholesky<f64, Dyn>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: MatrixSignal,
    pub r: VectorSignal,
    /// `K_k`; the last node repeats `K_{N-1}`.
    pub k: MatrixSignal,
    /// `H_k^-1 (b_k + G_k' r_{k+1})`, so that `v_k = -K_k z_k - feedforward_k`.
    pub feedforward: VectorSignal,
    /// Terminal costate; `r1` for penalty problems.
    pub p1: DVector<f64>,
    /// Closed-loop controllability Gramian (fixed terminal state only).
    pub gramian: Option<MatrixSignal>,
    pub gramian_condition: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqSolution {
    pub zeta: Curve,
    pub riccati: RiccatiSolution,
    pub cost: f64,
    pub terminal_error: f64,
}

impl LqSolution {
    /// Multipliers of the step equations, `lambda_k = P_k z_k + r_k`.
    pub fn costate(&self) -> Vec<DVector<f64>> {
        let (p, r) = (self.riccati.p.values(), self.riccati.r.values());
        self.zeta
            .alpha
            .values()
            .iter()
            .enumerate()
            .map(|(k, z)| &p[k] * z + &r[k])
            .collect()
    }
}

/// Solution of the condensed KKT system.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub zeta: Curve,
    pub cost: f64,
    pub terminal_error: f64,
    /// Multiplier of `z_N = x_T`, equal to `p1` at the optimum.
    pub multiplier: Option<DVector<f64>>,
}

impl DiscreteLq {
    pub fn new(grid: TimeGrid, steps: Vec<StepExpansion>, x0: DVector<f64>, terminal: Terminal) -> Result<Self> {
        if steps.len() != grid.n_steps() {
            return Err(Error::dimension("LQ steps", grid.n_steps(), steps.len()));
        }
        let n = x0.len();
        let m = steps[0].gamma.ncols();
        for s in &steps {
            if s.phi.shape() != (n, n) || s.gamma.shape() != (n, m) || s.r.shape() != (m, m) {
                return Err(Error::dimension("LQ step", format!("n={n}, m={m}"), "inconsistent blocks"));
            }
        }
        match &terminal {
            Terminal::FixedState(xt) if xt.len() != n => return Err(Error::dimension("x_T", n, xt.len())),
            Terminal::Penalty { p1, r1 } if p1.shape() != (n, n) || r1.len() != n => {
                return Err(Error::dimension("penalty terminal", n, format!("{}x{}", p1.nrows(), p1.ncols())))
            }
            _ => {}
        }
        Ok(Self {
            grid,
            steps,
            x0,
            terminal,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn steps(&self) -> &[StepExpansion] {
        &self.steps
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn terminal(&self) -> &Terminal {
        &self.terminal
    }

    fn n(&self) -> usize {
        self.x0.len()
    }

    fn m(&self) -> usize {
        self.steps[0].gamma.ncols()
    }

    /// Objective value of `(z, v)`; `v_N` is ignored.
    pub fn cost(&self, zeta: &Curve) -> f64 {
        let (zs, vs) = (zeta.alpha.values(), zeta.mu.values());
        let mut total = 0.0;
        for (k, st) in self.steps.iter().enumerate() {
            let (z, v) = (&zs[k], &vs[k]);
            total += 0.5 * z.dot(&(&st.q * z)) + z.dot(&(&st.s * v)) + 0.5 * v.dot(&(&st.r * v));
            total += st.a.dot(z) + st.b.dot(v);
        }
        if let Terminal::Penalty { p1, r1 } = &self.terminal {
            let z = zs.last().unwrap();
            total += 0.5 * z.dot(&(p1 * z)) + r1.dot(z);
        }
        total
    }

    fn sweep(&self, p_terminal: DMatrix<f64>) -> Result<Sweep> {
        let n_steps = self.steps.len();
        let mut p = vec![DMatrix::zeros(0, 0); n_steps + 1];
        let mut k = vec![DMatrix::zeros(0, 0); n_steps];
        let mut hs = Vec::with_capacity(n_steps);
        p[n_steps] = p_terminal;
        for j in (0..n_steps).rev() {
            let st = &self.steps[j];
            let pn = &p[j + 1];
            let pg = pn * &st.gamma;
            let h = &st.r + st.gamma.transpose() * &pg;
            let g = st.s.transpose() + pg.transpose() * &st.phi;
            let chol = match linalg::cholesky(&h) {
                Some(c) => c,
                None if linalg::cholesky(&st.r).is_none() => {
                    return Err(Error::Indefinite {
                        what: "R".into(),
                        node: j,
                    })
                }
                None => return Err(Error::ConjugatePoint { t: self.grid.node(j) }),
            };
            let kj = chol.solve(&g);
            let pj = &st.q + st.phi.transpose() * pn * &st.phi - g.transpose() * &kj;
            let pj = linalg::symmetrize(&pj);
            if !pj.iter().all(|v| v.is_finite()) {
                return Err(Error::ConjugatePoint { t: self.grid.node(j) });
            }
            p[j] = pj;
            k[j] = kj;
            hs.push(chol);
        }
        hs.reverse();
        Ok(Sweep { p, k, h: hs })
    }

    /// Backward pass for `r` and the feedforward terms, from `r_N`.
    fn affine(&self, sw: &Sweep, r_terminal: DVector<f64>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let n_steps = self.steps.len();
        let mut r = vec![DVector::zeros(0); n_steps + 1];
        let mut ff = vec![DVector::zeros(0); n_steps];
        r[n_steps] = r_terminal;
        for j in (0..n_steps).rev() {
            let st = &self.steps[j];
            let rhs = &st.b + st.gamma.transpose() * &r[j + 1];
            let closed = &st.phi - &st.gamma * &sw.k[j];
            r[j] = &st.a + closed.transpose() * &r[j + 1] - sw.k[j].transpose() * &st.b;
            ff[j] = sw.h[j].solve(&rhs);
        }
        (r, ff)
    }

    fn closed_loop(&self, sw: &Sweep, ff: &[DVector<f64>]) -> Result<Curve> {
        let n_steps = self.steps.len();
        let mut zs = Vec::with_capacity(n_steps + 1);
        let mut vs = Vec::with_capacity(n_steps + 1);
        zs.push(self.x0.clone());
        for j in 0..n_steps {
            let st = &self.steps[j];
            let v = -(&sw.k[j] * &zs[j]) - &ff[j];
            let next = &st.phi * &zs[j] + &st.gamma * &v;
            if !next.iter().all(|x| x.is_finite()) {
                return Err(Error::BlowUp { t: self.grid.node(j + 1) });
            }
            zs.push(next);
            vs.push(v);
        }
        vs.push(vs[n_steps - 1].clone());
        Curve::new(Signal::new(self.grid, zs)?, Signal::new(self.grid, vs)?)
    }

    /// `W_{k+1} = (F - G K) W_k (F - G K)' + G H^-1 G'`, `W_0 = 0`.
    fn gramian_from(&self, sw: &Sweep) -> Vec<DMatrix<f64>> {
        let n = self.n();
        let mut w = vec![DMatrix::zeros(n, n)];
        for (j, st) in self.steps.iter().enumerate() {
            let closed = &st.phi - &st.gamma * &sw.k[j];
            let hinv_gt = sw.h[j].solve(&st.gamma.transpose());
            let next = &closed * &w[j] * closed.transpose() + &st.gamma * hinv_gt;
            w.push(linalg::symmetrize(&next));
        }
        w
    }

    /// Closed-loop controllability Gramian along the grid (with `P_N = 0`).
    pub fn gramian(&self) -> Result<MatrixSignal> {
        let sw = self.sweep(DMatrix::zeros(self.n(), self.n()))?;
        Signal::new(self.grid, self.gramian_from(&sw))
    }

    /// `p1 = W_N^-1 (x_unf(T) + n(T) - x_T)` and the Gramian condition number.
    fn terminal_costate(&self, sw: &Sweep, w_t: &DMatrix<f64>, x_t: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        let condition = linalg::condition_spd(w_t);
        if condition > GRAMIAN_CONDITION_LIMIT {
            return Err(Error::Uncontrollable { condition });
        }
        let n = self.n();
        // Forced part with r_N = 0, and the unforced closed-loop response.
        let (_, ff) = self.affine(sw, DVector::zeros(n));
        let mut x_unf = self.x0.clone();
        let mut forced = DVector::zeros(n);
        for (j, st) in self.steps.iter().enumerate() {
            let closed = &st.phi - &st.gamma * &sw.k[j];
            x_unf = &closed * x_unf;
            forced = &closed * forced - &st.gamma * &ff[j];
        }
        let chol = linalg::cholesky(w_t).ok_or(Error::Uncontrollable { condition })?;
        Ok((chol.solve(&(x_unf + forced - x_t)), condition))
    }

    /// Riccati data for this problem, including `p1` for fixed terminal states.
    pub fn riccati(&self) -> Result<RiccatiSolution> {
        Ok(self.solve_parts()?.1)
    }

    fn solve_parts(&self) -> Result<(Sweep, RiccatiSolution)> {
        let n = self.n();
        let (sw, r_terminal, gramian, condition) = match &self.terminal {
            Terminal::Penalty { p1, r1 } => (self.sweep(p1.clone())?, r1.clone(), None, None),
            Terminal::FixedState(x_t) => {
                let sw = self.sweep(DMatrix::zeros(n, n))?;
                let w = self.gramian_from(&sw);
                let (p1, cond) = self.terminal_costate(&sw, w.last().unwrap(), x_t)?;
                (sw, p1, Some(Signal::new(self.grid, w)?), Some(cond))
            }
        };
        let (r, mut ff) = self.affine(&sw, r_terminal.clone());
        let mut k = sw.k.clone();
        k.push(k.last().unwrap().clone());
        ff.push(ff.last().unwrap().clone());
        let sol = RiccatiSolution {
            p: Signal::new(self.grid, sw.p.clone())?,
            r: Signal::new(self.grid, r)?,
            k: Signal::new(self.grid, k)?,
            feedforward: Signal::new(self.grid, ff)?,
            p1: r_terminal,
            gramian,
            gramian_condition: condition,
        };
        Ok((sw, sol))
    }

    /// Optimal solution by the sweep method.
    pub fn solve(&self) -> Result<LqSolution> {
        let (sw, riccati) = self.solve_parts()?;
        let zeta = self.closed_loop(&sw, riccati.feedforward.values())?;
        let cost = self.cost(&zeta);
        let terminal_error = match &self.terminal {
            Terminal::FixedState(x_t) => (zeta.alpha.last() - x_t).norm(),
            Terminal::Penalty { .. } => 0.0,
        };
        Ok(LqSolution {
            zeta,
            riccati,
            cost,
            terminal_error,
        })
    }

    /// Dense solve of the same problem with the states eliminated.
    ///
    /// The inputs are the only unknowns; `z_N = x_T` (when fixed) is kept as an
    /// equality constraint with an explicit multiplier, and the KKT matrix is
    /// factored by LU. Cost is cubic in the number of nodes.
    pub fn kkt_oracle(&self) -> Result<OracleSolution> {
        let n_nodes = self.grid.n_nodes();
        if n_nodes > ORACLE_MAX_NODES {
            return Err(Error::Precondition(format!(
                "KKT oracle is dense; at most {ORACLE_MAX_NODES} nodes, got {n_nodes}"
            )));
        }
        let (n, m) = (self.n(), self.m());
        let n_steps = self.steps.len();
        let nv = m * n_steps;
        // z_k = zf_k + Z_k v.
        let mut zf = vec![self.x0.clone()];
        let mut zs = vec![DMatrix::zeros(n, nv)];
        for (j, st) in self.steps.iter().enumerate() {
            zf.push(&st.phi * &zf[j]);
            let mut next = &st.phi * &zs[j];
            let mut cols = next.columns_mut(j * m, m);
            cols += &st.gamma;
            zs.push(next);
        }
        let mut zbig = DMatrix::zeros(n * n_steps, nv);
        let mut qz = DMatrix::zeros(n * n_steps, nv);
        for (j, st) in self.steps.iter().enumerate() {
            zbig.rows_mut(j * n, n).copy_from(&zs[j]);
            let mut block = &st.q * &zs[j];
            let mut cols = block.columns_mut(j * m, m);
            cols += &st.s;
            qz.rows_mut(j * n, n).copy_from(&block);
        }
        let mut hess = zbig.transpose() * &qz;
        let mut grad = DVector::zeros(nv);
        for (j, st) in self.steps.iter().enumerate() {
            let st_z = st.s.transpose() * &zs[j];
            let mut rows = hess.rows_mut(j * m, m);
            rows += &st_z;
            let mut diag = hess.view_mut((j * m, j * m), (m, m));
            diag += &st.r;
            grad += zs[j].transpose() * (&st.q * &zf[j] + &st.a);
            let mut g = grad.rows_mut(j * m, m);
            g += st.s.transpose() * &zf[j] + &st.b;
        }
        let zn = &zs[n_steps];
        let zf_n = &zf[n_steps];
        let (sol, multiplier) = match &self.terminal {
            Terminal::Penalty { p1, r1 } => {
                hess += zn.transpose() * p1 * zn;
                grad += zn.transpose() * (p1 * zf_n + r1);
                let hess = linalg::symmetrize(&hess);
                let v = hess
                    .clone()
                    .lu()
                    .solve(&(-&grad))
                    .ok_or_else(|| Error::SingularKkt("reduced Hessian is singular".into()))?;
                check_residual(&hess, &v, &(-&grad))?;
                (v, None)
            }
            Terminal::FixedState(x_t) => {
                let gram = zn * zn.transpose();
                if linalg::condition_spd(&gram) > 1e14 {
                    return Err(Error::SingularKkt("terminal state is not reachable from the inputs".into()));
                }
                let hess = linalg::symmetrize(&hess);
                let mut kkt = DMatrix::zeros(nv + n, nv + n);
                kkt.view_mut((0, 0), (nv, nv)).copy_from(&hess);
                kkt.view_mut((0, nv), (nv, n)).copy_from(&zn.transpose());
                kkt.view_mut((nv, 0), (n, nv)).copy_from(zn);
                let rhs = stack(&(-&grad), &(x_t - zf_n));
                let sol = kkt
                    .clone()
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::SingularKkt("KKT matrix is singular".into()))?;
                check_residual(&kkt, &sol, &rhs)?;
                (sol.rows(0, nv).into_owned(), Some(sol.rows(nv, n).into_owned()))
            }
        };
        let states: Vec<DVector<f64>> = (0..=n_steps).map(|j| &zf[j] + &zs[j] * &sol).collect();
        let mut inputs: Vec<DVector<f64>> = (0..n_steps).map(|j| sol.rows(j * m, m).into_owned()).collect();
        inputs.push(inputs[n_steps - 1].clone());
        let zeta = Curve::new(Signal::new(self.grid, states)?, Signal::new(self.grid, inputs)?)?;
        let cost = self.cost(&zeta);
        let terminal_error = match &self.terminal {
            Terminal::FixedState(x_t) => (zeta.alpha.last() - x_t).norm(),
            Terminal::Penalty { .. } => 0.0,
        };
        Ok(OracleSolution {
            zeta,
            cost,
            terminal_error,
            multiplier,
        })
    }
}

fn check_residual(a: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> Result<()> {
    let res = (a * x - b).amax();
    let scale = 1.0 + a.amax() * x.amax() + b.amax();
    if !res.is_finite() || res > 1e-8 * scale {
        return Err(Error::SingularKkt(format!("linear solve residual {res:.3e} is too large")));
    }
    Ok(())
}

pub fn solve_riccati(prob: &LqProblem) -> Result<RiccatiSolution> {
    prob.discretize()?.riccati()
}

/// Closed-loop controllability Gramian `W(t_k)` for the gain of the fixed-terminal sweep.
pub fn compute_gramian(prob: &LqProblem) -> Result<MatrixSignal> {
    prob.discretize()?.gramian()
}

/// Terminal costate of a fixed-terminal-state problem.
pub fn solve_p1(prob: &LqProblem) -> Result<DVector<f64>> {
    if !matches!(prob.terminal, Terminal::FixedState(_)) {
        return Err(Error::Precondition("p1 is defined for fixed terminal states only".into()));
    }
    Ok(solve_riccati(prob)?.p1)
}

pub fn solve_lq_transfer(prob: &LqProblem) -> Result<LqSolution> {
    if !matches!(prob.terminal, Terminal::FixedState(_)) {
        return Err(Error::Precondition("LQ transfer needs a fixed terminal state".into()));
    }
    prob.discretize()?.solve()
}

pub fn solve_lqr_penalty(prob: &LqProblem) -> Result<LqSolution> {
    if !matches!(prob.terminal, Terminal::Penalty { .. }) {
        return Err(Error::Precondition("penalty LQR needs a penalty terminal".into()));
    }
    prob.discretize()?.solve()
}

pub fn kkt_oracle(prob: &LqProblem) -> Result<OracleSolution> {
    prob.discretize()?.kkt_oracle()
}

/// Random smooth LTV problem with positive definite `R` and a jointly PSD stage Hessian.
///
/// Dynamics and weights are `X0 + X1 sin(w t + phase)` with random coefficients;
/// with `fixed` the terminal is a random target state, otherwise a random penalty.
pub fn random_problem<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize, grid: TimeGrid, fixed: bool) -> Result<LqProblem> {
    let mat = |r: usize, c: usize, scale: f64, rng: &mut R| DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale));
    let (a0, a1) = (mat(n, n, 1.0, rng), mat(n, n, 0.5, rng));
    let (b0, b1) = (mat(n, m, 1.0, rng), mat(n, m, 0.3, rng));
    let (g0, g1) = (mat(n + m, n + m, 1.0, rng), mat(n + m, n + m, 0.3, rng));
    let (c0, c1) = (mat(n + m, 1, 1.0, rng), mat(n + m, 1, 0.5, rng));
    let omega = rng.random_range(0.5..3.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let wave = |t: f64| (omega * t + phase).sin();
    let weight = |t: f64| {
        let g = &g0 + &g1 * wave(t);
        let mut w = &g * g.transpose() * 0.5;
        for i in n..n + m {
            w[(i, i)] += 0.2;
        }
        w
    };
    let a = Signal::from_fn(grid, |_, t| &a0 + &a1 * wave(t))?;
    let b = Signal::from_fn(grid, |_, t| &b0 + &b1 * wave(t).cos())?;
    let ws: Vec<DMatrix<f64>> = grid.nodes().into_iter().map(weight).collect();
    let lin: Vec<DVector<f64>> = grid
        .nodes()
        .into_iter()
        .map(|t| (&c0 + &c1 * wave(t)).column(0).into_owned())
        .collect();
    let quad = QuadApprox {
        a: Signal::new(grid, lin.iter().map(|c| c.rows(0, n).into_owned()).collect())?,
        b: Signal::new(grid, lin.iter().map(|c| c.rows(n, m).into_owned()).collect())?,
        q: Signal::new(grid, ws.iter().map(|w| w.view((0, 0), (n, n)).into_owned()).collect())?,
        s: Signal::new(grid, ws.iter().map(|w| w.view((0, n), (n, m)).into_owned()).collect())?,
        r: Signal::new(grid, ws.iter().map(|w| w.view((n, n), (m, m)).into_owned()).collect())?,
    };
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let terminal = if fixed {
        Terminal::FixedState(DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)))
    } else {
        let l = mat(n, n, 1.0, rng);
        Terminal::Penalty {
            p1: &l * l.transpose(),
            r1: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
        }
    };
    LqProblem::new(LtvData::new(a, b)?, quad, x0, terminal)
}
