//! Uniform time grids, node-sampled signals, and fixed-step RK4 integration.
//!
//! Every time-varying quantity in the crate is a [`Signal`] on a [`TimeGrid`].
//! Between nodes a signal is evaluated by piecewise-linear interpolation; at a
//! node the stored value is returned unchanged.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack accepted outside `[0, T]` before a query counts as a domain error.
pub const TIME_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    tf: f64,
    n_nodes: usize,
}

impl TimeGrid {
    pub fn new(tf: f64, n_nodes: usize) -> Result<Self> {
        if !(tf.is_finite() && tf > 0.0) {
            return Err(Error::Grid(format!("horizon must be positive and finite, got {tf}")));
        }
        if n_nodes < 2 {
            return Err(Error::Grid(format!("need at least 2 nodes, got {n_nodes}")));
        }
        Ok(Self { tf, n_nodes })
    }

    pub fn tf(&self) -> f64 {
        self.tf
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Number of integration steps, `n_nodes - 1`.
    pub fn n_steps(&self) -> usize {
        self.n_nodes - 1
    }

    pub fn dt(&self) -> f64 {
        self.tf / self.n_steps() as f64
    }

    /// Length of step `k`. All steps share [`TimeGrid::dt`] so that every
    /// consumer of the grid integrates with bit-identical step sizes.
    pub fn step(&self, k: usize) -> f64 {
        debug_assert!(k < self.n_steps());
        self.dt()
    }

    /// Time of node `k`. The last node is exactly `tf`.
    pub fn node(&self, k: usize) -> f64 {
        debug_assert!(k < self.n_nodes);
        if k + 1 == self.n_nodes {
            self.tf
        } else {
            k as f64 * self.tf / self.n_steps() as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|k| self.node(k)).collect()
    }

    /// Index `k` of the step `[t_k, t_{k+1}]` containing `t`, after clamping to the domain.
    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if !t.is_finite() || t < -TIME_SLACK || t > self.tf + TIME_SLACK {
            return Err(Error::Domain { t, tf: self.tf });
        }
        let t = t.clamp(0.0, self.tf);
        let last = self.n_steps() - 1;
        let mut k = ((t / self.dt()).floor() as usize).min(last);
        if k < last && t >= self.node(k + 1) {
            k += 1;
        }
        while k > 0 && t < self.node(k) {
            k -= 1;
        }
        Ok((k, t))
    }
}

/// A value that can live in a [`Signal`].
pub trait Sample: Clone + std::fmt::Debug {
    fn lerp(&self, other: &Self, w: f64) -> Self;
    fn shape(&self) -> (usize, usize);
    fn is_finite(&self) -> bool;
    /// Row-major flattening, used for CSV output.
    fn flatten(&self) -> Vec<f64>;
}

impl Sample for DVector<f64> {
    fn lerp(&self, other: &Self, w: f64) -> Self {
        self * (1.0 - w) + other * w
    }
    fn shape(&self) -> (usize, usize) {
        (self.len(), 1)
    }
    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
    fn flatten(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }
}

impl Sample for DMatrix<f64> {
    fn lerp(&self, other: &Self, w: f64) -> Self {
        self * (1.0 - w) + other * w
    }
    fn shape(&self) -> (usize, usize) {
        self.shape()
    }
    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
    fn flatten(&self) -> Vec<f64> {
        let (r, c) = self.shape();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(self[(i, j)]);
            }
        }
        out
    }
}

/// Values sampled at every node of a grid, all of one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal<T> {
    grid: TimeGrid,
    values: Vec<T>,
}

pub type VectorSignal = Signal<DVector<f64>>;
pub type MatrixSignal = Signal<DMatrix<f64>>;

impl<T: Sample> Signal<T> {
    pub fn new(grid: TimeGrid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::dimension("signal length", grid.n_nodes(), values.len()));
        }
        let shape = values[0].shape();
        if let Some(bad) = values.iter().position(|v| v.shape() != shape) {
            return Err(Error::dimension(
                format!("signal value at node {bad}"),
                format!("{shape:?}"),
                format!("{:?}", values[bad].shape()),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, value: T) -> Self {
        Self {
            grid,
            values: vec![value; grid.n_nodes()],
        }
    }

    pub fn from_fn(grid: TimeGrid, mut f: impl FnMut(usize, f64) -> T) -> Result<Self> {
        let values = (0..grid.n_nodes()).map(|k| f(k, grid.node(k))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn at(&self, k: usize) -> &T {
        &self.values[k]
    }

    pub fn first(&self) -> &T {
        &self.values[0]
    }

    pub fn last(&self) -> &T {
        &self.values[self.values.len() - 1]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values[0].shape()
    }

    /// Piecewise-linear evaluation; exact (a clone of the stored value) at nodes.
    pub fn interpolate(&self, t: f64) -> Result<T> {
        let (k, t) = self.grid.locate(t)?;
        let t0 = self.grid.node(k);
        let t1 = self.grid.node(k + 1);
        if t == t0 {
            return Ok(self.values[k].clone());
        }
        if t == t1 {
            return Ok(self.values[k + 1].clone());
        }
        let w = (t - t0) / (t1 - t0);
        Ok(self.values[k].lerp(&self.values[k + 1], w))
    }

    /// Samples this signal at the nodes of `grid` by linear interpolation.
    pub fn resample(&self, grid: TimeGrid) -> Result<Self> {
        if grid == self.grid {
            return Ok(self.clone());
        }
        let values = (0..grid.n_nodes())
            .map(|k| self.interpolate(grid.node(k)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, values)
    }

    pub fn map<U: Sample>(&self, mut f: impl FnMut(usize, &T) -> U) -> Result<Signal<U>> {
        let values = self.values.iter().enumerate().map(|(k, v)| f(k, v)).collect();
        Signal::new(self.grid, values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Sample::is_finite)
    }

    /// CSV with columns `<name>_1 ..`; matrices are flattened row-major.
    pub fn to_csv(&self, name: &str) -> String {
        signals_to_csv(self.grid, &[(name, self)])
    }
}

impl VectorSignal {
    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Largest node-wise Euclidean distance to `other` (same grid assumed).
    pub fn max_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `self + gamma * other`, node-wise.
    pub fn axpy(&self, gamma: f64, other: &Self) -> Self {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b * gamma)
            .collect();
        Self {
            grid: self.grid,
            values,
        }
    }
}

/// One classical RK4 step of size `h` (negative `h` steps backward).
pub fn rk4_step<F>(field: &mut F, t: f64, y: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = field(t, y);
    let k2 = field(t + 0.5 * h, &(y + &k1 * (0.5 * h)));
    let k3 = field(t + 0.5 * h, &(y + &k2 * (0.5 * h)));
    let k4 = field(t + h, &(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Integrates `dy/dt = field(t, y)` from `y(0) = y0` over the grid with RK4.
pub fn integrate_forward<F>(mut field: F, y0: &DVector<f64>, grid: TimeGrid) -> Result<VectorSignal>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    if !Sample::is_finite(y0) {
        return Err(Error::BlowUp { t: 0.0 });
    }
    let mut values = Vec::with_capacity(grid.n_nodes());
    values.push(y0.clone());
    for k in 0..grid.n_steps() {
        let t0 = grid.node(k);
        let h = grid.step(k);
        let next = rk4_step(&mut field, t0, &values[k], h);
        if !Sample::is_finite(&next) {
            return Err(Error::BlowUp { t: grid.node(k + 1) });
        }
        values.push(next);
    }
    Signal::new(grid, values)
}

/// Integrates `dy/dt = field(t, y)` backward from the terminal value `y(T) = y_t`.
pub fn integrate_backward<F>(mut field: F, y_t: &DVector<f64>, grid: TimeGrid) -> Result<VectorSignal>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    if !Sample::is_finite(y_t) {
        return Err(Error::BlowUp { t: grid.tf() });
    }
    let n = grid.n_nodes();
    let mut values = vec![y_t.clone(); n];
    for k in (0..grid.n_steps()).rev() {
        let t1 = grid.node(k + 1);
        let h = grid.node(k) - t1;
        let prev = rk4_step(&mut field, t1, &values[k + 1], h);
        if !Sample::is_finite(&prev) {
            return Err(Error::BlowUp { t: grid.node(k) });
        }
        values[k] = prev;
    }
    Signal::new(grid, values)
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes several signals side by side: header `t,<name>_1,...,<name>_k`, one row per node.
/// Matrix-valued signals are flattened row-major.
pub fn signals_to_csv<T: Sample>(grid: TimeGrid, columns: &[(&str, &Signal<T>)]) -> String {
    let mut out = String::from("t");
    for (name, sig) in columns {
        let (r, c) = sig.shape();
        for i in 1..=r * c {
            let _ = write!(out, ",{name}_{i}");
        }
    }
    out.push('\n');
    for k in 0..grid.n_nodes() {
        out.push_str(&fmt_f64(grid.node(k)));
        for (_, sig) in columns {
            for v in sig.at(k).flatten() {
                out.push(',');
                out.push_str(&fmt_f64(v));
            }
        }
        out.push('\n');
    }
    out
}

/// Parsed CSV table with a `t` column followed by named columns.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Csv("empty file".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        if header.first().map(String::as_str) != Some("t") {
            return Err(Error::Csv("first column must be `t`".into()));
        }
        let mut times = Vec::new();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Csv(format!("row {}: {e}", i + 1)))?;
            if fields.len() != header.len() {
                return Err(Error::Csv(format!(
                    "row {} has {} fields, header has {}",
                    i + 1,
                    fields.len(),
                    header.len()
                )));
            }
            times.push(fields[0]);
            rows.push(fields[1..].to_vec());
        }
        if times.len() < 2 {
            return Err(Error::Csv("need at least two rows".into()));
        }
        Ok(Self { header, times, rows })
    }

    /// Uniform grid implied by the time column, checked against the rows.
    pub fn grid(&self) -> Result<TimeGrid> {
        let grid = TimeGrid::new(*self.times.last().unwrap(), self.times.len())?;
        for (k, &t) in self.times.iter().enumerate() {
            if (t - grid.node(k)).abs() > 1e-9 * (1.0 + grid.tf()) {
                return Err(Error::Csv(format!("time column is not uniform from 0 (row {})", k + 1)));
            }
        }
        Ok(grid)
    }

    /// Extracts the vector signal stored in columns `<name>_1 .. <name>_k`.
    pub fn signal(&self, name: &str) -> Result<VectorSignal> {
        let grid = self.grid()?;
        let prefix = format!("{name}_");
        let cols: Vec<usize> = self.header[1..]
            .iter()
            .enumerate()
            .filter(|(_, h)| {
                h.strip_prefix(&prefix)
                    .is_some_and(|idx| idx.parse::<usize>().is_ok())
            })
            .map(|(i, _)| i)
            .collect();
        if cols.is_empty() {
            return Err(Error::Csv(format!("no columns named `{name}_<i>`")));
        }
        Signal::new(
            grid,
            self.rows
                .iter()
                .map(|row| DVector::from_iterator(cols.len(), cols.iter().map(|&c| row[c])))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(f64::NAN, 10).is_err());
        let g = TimeGrid::new(20.0, 2001).unwrap();
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(2000), 20.0);
        assert_abs_diff_eq!(g.dt(), 0.01, epsilon = 1e-15);
        let nodes = g.nodes();
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn interpolate_examples() {
        let g = TimeGrid::new(1.0, 2).unwrap();
        let c = Signal::constant(g, scalar(3.5));
        assert_eq!(c.interpolate(0.37).unwrap()[0], 3.5);

        let lin = Signal::new(g, vec![scalar(0.0), scalar(2.0)]).unwrap();
        assert_abs_diff_eq!(lin.interpolate(0.5).unwrap()[0], 1.0, epsilon = 1e-15);

        let g3 = TimeGrid::new(2.0, 3).unwrap();
        let sq = Signal::new(g3, vec![scalar(0.0), scalar(1.0), scalar(4.0)]).unwrap();
        assert_abs_diff_eq!(sq.interpolate(1.5).unwrap()[0], 2.5, epsilon = 1e-15);
    }

    #[test]
    fn interpolate_domain() {
        let g = TimeGrid::new(1.0, 11).unwrap();
        let s = Signal::from_fn(g, |_, t| scalar(t)).unwrap();
        assert!(matches!(s.interpolate(-1e-6), Err(Error::Domain { .. })));
        assert!(matches!(s.interpolate(1.0 + 1e-6), Err(Error::Domain { .. })));
        assert_eq!(s.interpolate(-1e-13).unwrap()[0], 0.0);
        assert_eq!(s.interpolate(1.0 + 1e-13).unwrap()[0], 1.0);
    }

    #[test]
    fn interpolate_is_exact_at_nodes() {
        let g = TimeGrid::new(20.0, 2001).unwrap();
        let s = Signal::from_fn(g, |_, t| scalar((3.0 * t).sin() + 1e-3 * t * t)).unwrap();
        for k in 0..g.n_nodes() {
            assert_eq!(s.interpolate(g.node(k)).unwrap(), *s.at(k));
        }
    }

    #[test]
    fn forward_examples() {
        let g = TimeGrid::new(1.0, 101).unwrap();
        let zero = integrate_forward(|_, y| y * 0.0, &scalar(4.0), g).unwrap();
        assert!(zero.values().iter().all(|v| v[0] == 4.0));

        let exp = integrate_forward(|_, y| y.clone(), &scalar(1.0), g).unwrap();
        assert_eq!(exp.first()[0], 1.0);
        assert_abs_diff_eq!(exp.last()[0], std::f64::consts::E, epsilon = 1e-8);

        let relax = integrate_forward(|_, y| y.map(|v| 1.0 - v), &scalar(0.0), g).unwrap();
        assert_abs_diff_eq!(relax.last()[0], 1.0 - (-1.0f64).exp(), epsilon = 1e-8);
    }

    #[test]
    fn backward_examples() {
        let g = TimeGrid::new(1.0, 101).unwrap();
        let zero = integrate_backward(|_, y| y * 0.0, &scalar(-2.0), g).unwrap();
        assert!(zero.values().iter().all(|v| v[0] == -2.0));

        let decay = integrate_backward(|_, y| -y, &scalar(1.0), g).unwrap();
        assert_eq!(decay.last()[0], 1.0);
        assert_abs_diff_eq!(decay.first()[0], std::f64::consts::E, epsilon = 1e-8);

        // -dP/dt = -P^2 + 1, P(T) = 0  =>  P(t) = tanh(T - t)
        let g = TimeGrid::new(2.0, 2001).unwrap();
        let ric = integrate_backward(|_, p| p.map(|v| v * v - 1.0), &scalar(0.0), g).unwrap();
        assert_abs_diff_eq!(ric.first()[0], 2.0f64.tanh(), epsilon = 1e-6);
    }

    #[test]
    fn blow_up_is_reported() {
        let g = TimeGrid::new(2.0, 201).unwrap();
        // y' = y^2 escapes at t = 1 from y(0) = 1
        let err = integrate_forward(|_, y| y.map(|v| v * v), &scalar(1.0), g).unwrap_err();
        match err {
            Error::BlowUp { t } => assert!(t > 0.9 && t <= 2.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rk4_order_on_exponential() {
        let max_err = |n: usize| {
            let g = TimeGrid::new(1.0, n).unwrap();
            let s = integrate_forward(|_, y| y.clone(), &scalar(1.0), g).unwrap();
            (0..n)
                .map(|k| (s.at(k)[0] - g.node(k).exp()).abs())
                .fold(0.0, f64::max)
        };
        let ratio = max_err(11) / max_err(21);
        assert!((14.0..=18.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn forward_backward_consistency() {
        let g = TimeGrid::new(3.0, 601).unwrap();
        let field = |t: f64, y: &DVector<f64>| {
            DVector::from_vec(vec![y[1], -y[0] - 0.3 * y[1] + (2.0 * t).cos()])
        };
        let y0 = DVector::from_vec(vec![0.4, -1.2]);
        let fwd = integrate_forward(field, &y0, g).unwrap();
        let back = integrate_backward(field, fwd.last(), g).unwrap();
        assert!((back.first() - &y0).norm() < 1e-8);
    }

    #[test]
    fn csv_round_trip() {
        let g = TimeGrid::new(1.0, 5).unwrap();
        let s = Signal::from_fn(g, |_, t| DVector::from_vec(vec![t.sin(), 1.0 / 3.0 + t])).unwrap();
        let text = s.to_csv("x");
        assert!(text.starts_with("t,x_1,x_2\n"));
        let table = CsvTable::parse(&text).unwrap();
        let back = table.signal("x").unwrap();
        assert_eq!(back, s);
    }
}
