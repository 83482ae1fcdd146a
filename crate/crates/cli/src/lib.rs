//! `fspronto` command line: `lq`, `project` and `solve` on a JSON problem config.
//!
//! Exit codes: 0 success (converged), 2 iteration limit reached with a feasible
//! result, 1 any error (an `error.json` report is written to the output dir).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fspronto::config::{self, ProblemConfig};
use fspronto::cost::{quadratic_approximation, HessianMode};
use fspronto::fspronto::{project_to_target, solve_with};
use fspronto::lq::{random_problem, solve_lq_transfer};
use fspronto::model::linearize_along;
use fspronto::projection::{design_gain, project};
use fspronto::{Error, LqProblem, SolveStatus, Terminal, TimeGrid, Trajectory};
use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::SeedableRng;
use serde_json::{json, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_MAX_ITER: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fspronto", version, about = "Terminal-state constrained trajectory optimization")]
pub struct Cli {
    /// Problem config: a JSON file, or the name of a bundled config.
    #[arg(long, global = true, default_value = "pendulum_transfer")]
    pub config: String,
    /// Directory for all artifacts (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,
    /// Seed for randomized test problems (`lq --random`).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// LQ transfer that corrects the terminal state of the projected guess.
    Lq(LqArgs),
    /// Constrained projection of a curve onto trajectories reaching `x_T`.
    Project(ProjectArgs),
    /// Full optimization.
    Solve(SolveArgs),
}

#[derive(Debug, Args)]
pub struct LqArgs {
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Solve a random controllable LTV transfer (seeded by `--seed`) instead.
    #[arg(long)]
    pub random: bool,
    #[arg(long, default_value_t = 2, requires = "random")]
    pub state_dim: usize,
    #[arg(long, default_value_t = 1, requires = "random")]
    pub input_dim: usize,
    #[arg(long, default_value_t = 1.0, requires = "random")]
    pub horizon: f64,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Curve CSV with `x_*` and `u_*` columns; defaults to the config's guess.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Terminal state, comma separated; defaults to the config's `x_T`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub target: Option<Vec<f64>>,
    /// Diagonal of the tracking state weight.
    #[arg(long, value_delimiter = ',')]
    pub gain_q: Option<Vec<f64>>,
    /// Diagonal of the tracking input weight.
    #[arg(long, value_delimiter = ',')]
    pub gain_r: Option<Vec<f64>>,
    #[arg(long)]
    pub nodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub descent_tol: Option<f64>,
    #[arg(long)]
    pub proj_tol: Option<f64>,
    /// `gauss_newton` or `newton`.
    #[arg(long)]
    pub hessian_mode: Option<HessianMode>,
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Write `iter_<i>.csv` for every iterate.
    #[arg(long)]
    pub dump_iterates: bool,
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::new().filter_level(cli.log_level).try_init();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Err(io) = write_error_report(&cli.output_dir, &e) {
                eprintln!("error: could not write error report: {io}");
            }
            EXIT_ERROR
        }
    }
}

fn execute(cli: &Cli) -> fspronto::Result<i32> {
    match &cli.command {
        Command::Lq(args) => run_lq(cli, args),
        Command::Project(args) => run_project(cli, args),
        Command::Solve(args) => run_solve(cli, args),
    }
}

/// Reads a config file, or falls back to a bundled config of that name.
pub fn load_config(source: &str) -> fspronto::Result<(ProblemConfig, PathBuf)> {
    let path = Path::new(source);
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        return Ok((config::parse_config(&text)?, base));
    }
    match config::bundled(source) {
        Some(text) => Ok((config::parse_config(text)?, PathBuf::from("."))),
        None => Err(Error::Config {
            key: "--config".into(),
            message: format!("`{source}` is neither a file nor a bundled config"),
        }),
    }
}

/// Writes `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, dir.join(name))
}

fn write_json(dir: &Path, name: &str, value: &Value) -> fspronto::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    Ok(write_atomic(dir, name, &text)?)
}

fn write_error_report(dir: &Path, e: &Error) -> fspronto::Result<()> {
    let mut causes = Vec::new();
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        causes.push(s.to_string());
        source = s.source();
    }
    let mut report = json!({ "kind": e.kind(), "message": e.to_string(), "causes": causes });
    if let Error::Solver {
        iteration, history, last, ..
    } = e
    {
        report["iteration"] = json!(iteration);
        report["history"] = json!(history);
        write_atomic(dir, "last_feasible.csv", &last.curve().to_csv("x", "u"))?;
    }
    write_json(dir, "error.json", &report)
}

fn with_nodes(mut config: ProblemConfig, nodes: Option<usize>) -> fspronto::Result<ProblemConfig> {
    if let Some(n) = nodes {
        config.n_nodes = n;
        config.validate()?;
    }
    Ok(config)
}

fn run_lq(cli: &Cli, args: &LqArgs) -> fspronto::Result<i32> {
    let problem = if args.random {
        let grid = TimeGrid::new(args.horizon, args.nodes.unwrap_or(201))?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cli.seed);
        random_problem(&mut rng, args.state_dim, args.input_dim, grid, true)?
    } else {
        let (config, base) = load_config(&cli.config)?;
        let exp = with_nodes(config, args.nodes)?.build(&base)?;
        let (model, problem) = (exp.problem.model.as_ref(), &exp.problem);
        let (qk, rk) = gain_weights(&exp.options, model.state_dim(), model.input_dim());
        let eta = project(&exp.guess, &design_gain(&exp.guess, model, &qk, &rk)?, model)?;
        let curve = eta.curve();
        LqProblem::new(
            linearize_along(model, curve)?,
            quadratic_approximation(problem.cost.as_ref(), model, curve, HessianMode::GaussNewton, None)?,
            DVector::zeros(model.state_dim()),
            Terminal::FixedState(&problem.x_t - curve.alpha.last()),
        )?
    };
    let sol = solve_lq_transfer(&problem)?;
    let dir = &cli.output_dir;
    write_atomic(dir, "zeta.csv", &sol.zeta.to_csv("z", "v"))?;
    write_atomic(dir, "riccati_P.csv", &sol.riccati.p.to_csv("P"))?;
    write_atomic(dir, "gain_K.csv", &sol.riccati.k.to_csv("K"))?;
    let summary = json!({
        "cost": sol.cost,
        "terminal_error": sol.terminal_error,
        "p1": sol.riccati.p1.as_slice(),
        "gramian_condition": sol.riccati.gramian_condition,
    });
    write_json(dir, "summary.json", &summary)?;
    Ok(EXIT_OK)
}

fn gain_weights(opts: &fspronto::SolverOptions, n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        opts.gain_q.clone().unwrap_or_else(|| DMatrix::identity(n, n)),
        opts.gain_r.clone().unwrap_or_else(|| DMatrix::identity(m, m)),
    )
}

fn diagonal(key: &str, diag: &[f64], dim: usize) -> fspronto::Result<Vec<Vec<f64>>> {
    if diag.len() != dim {
        return Err(Error::Dimension {
            what: key.into(),
            expected: dim.to_string(),
            got: diag.len().to_string(),
        });
    }
    Ok((0..dim)
        .map(|i| (0..dim).map(|j| if i == j { diag[i] } else { 0.0 }).collect())
        .collect())
}

fn run_project(cli: &Cli, args: &ProjectArgs) -> fspronto::Result<i32> {
    let (config, base) = load_config(&cli.config)?;
    let mut config = with_nodes(config, args.nodes)?;
    let (n, m) = {
        let model = config.model()?;
        (model.state_dim(), model.input_dim())
    };
    if let Some(t) = &args.target {
        if t.len() != n {
            return Err(Error::Dimension {
                what: "--target".into(),
                expected: n.to_string(),
                got: t.len().to_string(),
            });
        }
        config.x_t = t.clone();
    }
    if let Some(q) = &args.gain_q {
        config.solver.gain_q = Some(diagonal("--gain-q", q, n)?);
    }
    if let Some(r) = &args.gain_r {
        config.solver.gain_r = Some(diagonal("--gain-r", r, m)?);
    }
    let exp = config.build(&base)?;
    let curve = match &args.curve {
        Some(path) => config::read_curve(path, exp.problem.grid, n, m, "--curve")?,
        None => exp.guess.clone(),
    };
    let (traj, report, _) = project_to_target(&exp.problem, &curve, &exp.options)?;
    write_atomic(&cli.output_dir, "projected.csv", &traj.curve().to_csv("x", "u"))?;
    write_json(&cli.output_dir, "report.json", &json!(report))?;
    Ok(EXIT_OK)
}

fn run_solve(cli: &Cli, args: &SolveArgs) -> fspronto::Result<i32> {
    let (config, base) = load_config(&cli.config)?;
    let mut config = with_nodes(config, args.nodes)?;
    if let Some(v) = args.max_iters {
        config.solver.max_outer_iter = v;
    }
    if let Some(v) = args.descent_tol {
        config.solver.descent_tol = v;
    }
    if let Some(v) = args.proj_tol {
        config.solver.proj_tol = Some(v);
    }
    if let Some(v) = args.hessian_mode {
        config.solver.hessian_mode = v;
    }
    config.validate()?;
    let exp = config.build(&base)?;
    let dir = &cli.output_dir;
    let mut dump_error = None;
    let mut on_iterate = |record: &fspronto::IterationRecord, xi: &Trajectory| {
        if args.dump_iterates && dump_error.is_none() {
            let name = format!("iter_{}.csv", record.index);
            if let Err(e) = write_atomic(dir, &name, &xi.curve().to_csv("x", "u")) {
                dump_error = Some(e);
            }
        }
    };
    let outcome = solve_with(&exp.problem, &exp.guess, &exp.options, &mut on_iterate)?;
    if let Some(e) = dump_error {
        return Err(e.into());
    }
    let solution = recertify(&exp, &outcome.trajectory)?;
    write_atomic(dir, "solution.csv", &solution.curve().to_csv("x", "u"))?;
    let history = json!({
        "config": config,
        "status": outcome.status,
        "iterations": outcome.history,
    });
    write_json(dir, "history.json", &history)?;
    Ok(match outcome.status {
        SolveStatus::Converged => EXIT_OK,
        SolveStatus::MaxIterations => EXIT_MAX_ITER,
    })
}

/// Independent feasibility check of the final iterate before it is written.
fn recertify(exp: &fspronto::Experiment, traj: &Trajectory) -> fspronto::Result<Trajectory> {
    let model = exp.problem.model.as_ref();
    let checked = Trajectory::certify(traj.curve().clone(), model, exp.options.feas_tol)?.with_target(&exp.problem.x_t);
    let tol = exp.options.projection_options().resolved_tol(&exp.problem.x_t);
    let err = checked.terminal_error().unwrap_or(f64::INFINITY);
    if !(err <= tol) {
        return Err(Error::Precondition(format!(
            "final trajectory misses the terminal state by {err:.3e} (tolerance {tol:.3e})"
        )));
    }
    Ok(checked)
}
