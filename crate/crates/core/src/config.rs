//! JSON problem configuration: model, cost, horizon, boundary states, initial
//! guess and solver options. Unknown keys are rejected; errors name the key.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::{HessianMode, QuadraticTrackingCost};
use crate::error::{Error, Result};
use crate::fspronto::{Problem, SolverOptions};
use crate::grid::{CsvTable, Signal, TimeGrid, VectorSignal};
use crate::model::{DynamicsModel, LinearModel, PendulumModel};
use crate::projection::Curve;

/// Configurations shipped with the library, by name.
pub const BUNDLED: &[(&str, &str)] = &[("pendulum_transfer", include_str!("../configs/pendulum_transfer.json"))];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Pendulum,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumParams {
    #[serde(rename = "L", default = "default_length")]
    pub length: f64,
    #[serde(default = "default_gravity")]
    pub g: f64,
}

fn default_length() -> f64 {
    0.5
}

fn default_gravity() -> f64 {
    9.81
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearParams {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
}

/// Time functions for desired curves, one value per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    Constant {
        value: Vec<f64>,
    },
    /// `offset_i + amplitude_i cos(frequency t + phase_i)`, frequency in rad/s.
    Sinusoid {
        offset: Vec<f64>,
        amplitude: Vec<f64>,
        frequency: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        phase: Option<Vec<f64>>,
    },
}

impl Generator {
    fn len(&self) -> usize {
        match self {
            Generator::Constant { value } => value.len(),
            Generator::Sinusoid { offset, .. } => offset.len(),
        }
    }

    fn validate(&self, key: &str, dim: usize) -> Result<()> {
        if self.len() != dim {
            return Err(Error::dimension(key, dim, self.len()));
        }
        if let Generator::Sinusoid {
            amplitude,
            frequency,
            phase,
            ..
        } = self
        {
            if amplitude.len() != dim {
                return Err(Error::dimension(format!("{key}.amplitude"), dim, amplitude.len()));
            }
            if let Some(p) = phase {
                if p.len() != dim {
                    return Err(Error::dimension(format!("{key}.phase"), dim, p.len()));
                }
            }
            if !frequency.is_finite() {
                return Err(Error::config(format!("{key}.frequency"), "must be finite"));
            }
        }
        Ok(())
    }

    pub fn sample(&self, grid: TimeGrid) -> VectorSignal {
        let values = (0..grid.n_nodes())
            .map(|k| {
                let t = grid.node(k);
                match self {
                    Generator::Constant { value } => DVector::from_column_slice(value),
                    Generator::Sinusoid {
                        offset,
                        amplitude,
                        frequency,
                        phase,
                    } => DVector::from_fn(offset.len(), |i, _| {
                        let ph = phase.as_ref().map_or(0.0, |p| p[i]);
                        offset[i] + amplitude[i] * (frequency * t + ph).cos()
                    }),
                }
            })
            .collect();
        Signal::new(grid, values).expect("one value per node")
    }
}

/// Source of the desired curve `(x_d, u_d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesiredConfig {
    /// Signal CSV with columns `x_*` and `u_*`, resampled onto the problem grid.
    File { path: PathBuf },
    Generator { state: Generator, input: Generator },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    pub desired: DesiredConfig,
}

/// Initial guess for the solver.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GuessConfig {
    /// Linear interpolation from `x0` to `x_T`, zero input.
    #[default]
    StraightLine,
    /// The desired curve itself.
    Desired,
    /// Energy-pumping swing-up with a linear catch (pendulum only).
    SwingUp,
    /// Signal CSV with columns `x_*` and `u_*`.
    File { path: PathBuf },
}

/// Solver options in config form; omitted keys take the library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_outer_iter: usize,
    pub descent_tol: f64,
    pub armijo_alpha: f64,
    pub backtrack_beta: f64,
    pub gamma_min: f64,
    pub proj_tol: Option<f64>,
    pub proj_max_iter: usize,
    pub feas_tol: f64,
    pub hessian_mode: HessianMode,
    pub gain_q: Option<Vec<Vec<f64>>>,
    pub gain_r: Option<Vec<Vec<f64>>>,
    pub gain_redesign_period: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            max_outer_iter: o.max_outer_iter,
            descent_tol: o.descent_tol,
            armijo_alpha: o.armijo_alpha,
            backtrack_beta: o.backtrack_beta,
            gamma_min: o.gamma_min,
            proj_tol: o.proj_tol,
            proj_max_iter: o.proj_max_iter,
            feas_tol: o.feas_tol,
            hessian_mode: o.hessian_mode,
            gain_q: None,
            gain_r: None,
            gain_redesign_period: o.gain_redesign_period,
        }
    }
}

impl SolverConfig {
    pub fn to_options(&self, n: usize, m: usize) -> Result<SolverOptions> {
        let opts = SolverOptions {
            max_outer_iter: self.max_outer_iter,
            descent_tol: self.descent_tol,
            armijo_alpha: self.armijo_alpha,
            backtrack_beta: self.backtrack_beta,
            gamma_min: self.gamma_min,
            proj_tol: self.proj_tol,
            proj_max_iter: self.proj_max_iter,
            feas_tol: self.feas_tol,
            hessian_mode: self.hessian_mode,
            gain_q: self.gain_q.as_ref().map(|q| matrix("solver.gain_q", q, n, n)).transpose()?,
            gain_r: self.gain_r.as_ref().map(|r| matrix("solver.gain_r", r, m, m)).transpose()?,
            gain_redesign_period: self.gain_redesign_period,
        };
        opts.validate()?;
        Ok(opts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub model: ModelKind,
    /// Model parameters: `{L, g}` for the pendulum, `{A, B}` for linear models.
    #[serde(default)]
    pub params: serde_json::Value,
    pub cost: CostConfig,
    pub horizon: f64,
    #[serde(default = "default_nodes")]
    pub n_nodes: usize,
    pub x0: Vec<f64>,
    #[serde(rename = "x_T")]
    pub x_t: Vec<f64>,
    #[serde(default)]
    pub guess: GuessConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn default_nodes() -> usize {
    2001
}

/// Everything needed for a solve, built from a config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub problem: Problem,
    pub desired: Curve,
    pub guess: Curve,
    pub options: SolverOptions,
}

/// Parses and validates a configuration; defaults are filled in.
pub fn parse_config(text: &str) -> Result<ProblemConfig> {
    if text.trim().is_empty() {
        return Err(Error::Parse("empty configuration".into()));
    }
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut config: ProblemConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() {
            Error::Parse(inner.to_string())
        } else if key == "." {
            Error::config("(top level)", inner.to_string())
        } else {
            Error::config(key, inner.to_string())
        }
    })?;
    config.resolve_params()?;
    config.validate()?;
    Ok(config)
}

fn matrix(key: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    let got_cols = rows.first().map_or(0, Vec::len);
    if rows.len() != nrows || rows.iter().any(|r| r.len() != got_cols) || got_cols != ncols {
        let shape = if rows.iter().all(|r| r.len() == got_cols) {
            format!("{}x{}", rows.len(), got_cols)
        } else {
            "ragged rows".to_string()
        };
        return Err(Error::dimension(key, format!("{nrows}x{ncols}"), shape));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn rectangular(key: &str, rows: &[Vec<f64>]) -> Result<(usize, usize)> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::config(key, "expected a non-empty rectangular array of rows"));
    }
    Ok((rows.len(), cols))
}

impl ProblemConfig {
    /// Replaces `params` by its fully defaulted form.
    fn resolve_params(&mut self) -> Result<()> {
        let params = if self.params.is_null() {
            serde_json::Value::Object(Default::default())
        } else {
            self.params.clone()
        };
        let resolved = match self.model {
            ModelKind::Pendulum => serde_json::to_value(parse_params::<PendulumParams>(params)?),
            ModelKind::Linear => serde_json::to_value(parse_params::<LinearParams>(params)?),
        };
        self.params = resolved.map_err(|e| Error::config("params", e.to_string()))?;
        Ok(())
    }

    pub fn model(&self) -> Result<Arc<dyn DynamicsModel>> {
        Ok(match self.model {
            ModelKind::Pendulum => {
                let p: PendulumParams = parse_params(self.params.clone())?;
                Arc::new(PendulumModel::new(p.length, p.g)?)
            }
            ModelKind::Linear => {
                let p: LinearParams = parse_params(self.params.clone())?;
                let (n, _) = rectangular("params.A", &p.a)?;
                let a = matrix("params.A", &p.a, n, n)?;
                let (nb, m) = rectangular("params.B", &p.b)?;
                if nb != n {
                    return Err(Error::dimension("params.B", format!("{n}x{m}"), format!("{nb}x{m}")));
                }
                Arc::new(LinearModel::new(a, matrix("params.B", &p.b, n, m)?)?)
            }
        })
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::config("horizon", format!("must be positive and finite, got {}", self.horizon)));
        }
        if self.n_nodes < 2 {
            return Err(Error::config("n_nodes", format!("need at least 2 nodes, got {}", self.n_nodes)));
        }
        TimeGrid::new(self.horizon, self.n_nodes)
    }

    /// Cross-checks every dimension against the model.
    pub fn validate(&self) -> Result<()> {
        let model = self.model()?;
        let (n, m) = (model.state_dim(), model.input_dim());
        self.grid()?;
        if self.x0.len() != n {
            return Err(Error::dimension("x0", n, self.x0.len()));
        }
        if self.x_t.len() != n {
            return Err(Error::dimension("x_T", n, self.x_t.len()));
        }
        if !self.x0.iter().chain(&self.x_t).all(|v| v.is_finite()) {
            return Err(Error::config("x0/x_T", "boundary states must be finite"));
        }
        let q = matrix("Q", &self.cost.q, n, n)?;
        let r = matrix("R", &self.cost.r, m, m)?;
        if let DesiredConfig::Generator { state, input } = &self.cost.desired {
            state.validate("cost.desired.state", n)?;
            input.validate("cost.desired.input", m)?;
        }
        if self.guess == GuessConfig::SwingUp && self.model != ModelKind::Pendulum {
            return Err(Error::config("guess.kind", "swing_up needs the pendulum model"));
        }
        // Weight checks without the desired curve.
        let grid = TimeGrid::new(1.0, 2)?;
        QuadraticTrackingCost::new(
            q,
            r,
            Signal::constant(grid, DVector::zeros(n)),
            Signal::constant(grid, DVector::zeros(m)),
        )?;
        self.solver.to_options(n, m)?;
        Ok(())
    }

    /// Builds the problem; relative file paths are resolved against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<Experiment> {
        self.validate()?;
        let model = self.model()?;
        let (n, m) = (model.state_dim(), model.input_dim());
        let grid = self.grid()?;
        let desired = match &self.cost.desired {
            DesiredConfig::Generator { state, input } => Curve::new(state.sample(grid), input.sample(grid))?,
            DesiredConfig::File { path } => read_curve(&base_dir.join(path), grid, n, m, "cost.desired.path")?,
        };
        let cost = QuadraticTrackingCost::new(
            matrix("Q", &self.cost.q, n, n)?,
            matrix("R", &self.cost.r, m, m)?,
            desired.alpha.clone(),
            desired.mu.clone(),
        )?;
        let x0 = DVector::from_column_slice(&self.x0);
        let problem = Problem::new(
            model,
            Arc::new(cost),
            x0.clone(),
            DVector::from_column_slice(&self.x_t),
            grid,
        )?;
        let guess = match &self.guess {
            GuessConfig::StraightLine => problem.straight_line_guess(),
            GuessConfig::Desired => desired.clone(),
            GuessConfig::SwingUp => {
                let p: PendulumParams = parse_params(self.params.clone())?;
                PendulumModel::new(p.length, p.g)?.swing_up_guess(grid, &x0)?
            }
            GuessConfig::File { path } => read_curve(&base_dir.join(path), grid, n, m, "guess.path")?,
        };
        Ok(Experiment {
            problem,
            desired,
            guess,
            options: self.solver.to_options(n, m)?,
        })
    }
}

fn parse_params<T: serde::de::DeserializeOwned>(value: serde_json::Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let key = if path == "." { "params".to_string() } else { format!("params.{path}") };
        Error::config(key, e.into_inner().to_string())
    })
}

/// Reads a `x_*`, `u_*` curve from CSV and resamples it onto `grid`.
pub fn read_curve(path: &Path, grid: TimeGrid, n: usize, m: usize, key: &str) -> Result<Curve> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::config(key, format!("{}: {e}", path.display())))?;
    let table = CsvTable::parse(&text)?;
    let (x, u) = (table.signal("x")?, table.signal("u")?);
    if x.shape().0 != n {
        return Err(Error::dimension(format!("{key} (x columns)"), n, x.shape().0));
    }
    if u.shape().0 != m {
        return Err(Error::dimension(format!("{key} (u columns)"), m, u.shape().0));
    }
    Curve::new(x.resample(grid)?, u.resample(grid)?)
}
