use thiserror::Error;

use crate::fspronto::IterationRecord;
use crate::projection::Trajectory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    Grid(String),

    #[error("time {t} lies outside the signal domain [0, {tf}]")]
    Domain { t: f64, tf: f64 },

    #[error("integration produced a non-finite value at t = {t}")]
    BlowUp { t: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: String,
        got: String,
    },

    #[error("{0}")]
    InvalidWeight(String),

    #[error("{what} is not positive definite at node {node}")]
    Indefinite { what: String, node: usize },

    #[error("Riccati solution escapes near t = {t} (conjugate point)")]
    ConjugatePoint { t: f64 },

    #[error("controllability Gramian is ill-conditioned (condition estimate {condition:.3e}); the transfer is practically uncontrollable")]
    Uncontrollable { condition: f64 },

    #[error("KKT system is singular: {0}")]
    SingularKkt(String),

    #[error("projection diverged at t = {t}; the feedback gain cannot stabilize the curve")]
    ProjectionDivergence { t: f64 },

    #[error("constrained projection did not converge in {} iterations (terminal errors: {history:?})", history.len().saturating_sub(1))]
    ProjectionNotConverged { history: Vec<f64> },

    #[error("line search failed: no step >= {gamma_min} satisfies the sufficient decrease condition (cost {cost}, descent {descent}, last trial cost {last_trial})")]
    LineSearch {
        gamma_min: f64,
        cost: f64,
        descent: f64,
        last_trial: f64,
    },

    #[error("cost increased beyond the projection drift allowance: {previous} -> {next} (bound {bound})")]
    MonotoneDescent { previous: f64, next: f64, bound: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("cannot build a feasible initial trajectory, try a better guess: {0}")]
    CannotInitialize(#[source] Box<Error>),

    #[error("solver failed at iteration {iteration}: {source}")]
    Solver {
        iteration: usize,
        #[source]
        source: Box<Error>,
        last: Box<Trajectory>,
        history: Vec<IterationRecord>,
    },

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("csv error: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dimension(what: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            what: what.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag, used in JSON error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Grid(_) => "grid",
            Error::Domain { .. } => "domain",
            Error::BlowUp { .. } => "blow_up",
            Error::Dimension { .. } => "dimension",
            Error::InvalidWeight(_) => "invalid_weight",
            Error::Indefinite { .. } => "indefinite",
            Error::ConjugatePoint { .. } => "conjugate_point",
            Error::Uncontrollable { .. } => "uncontrollable",
            Error::SingularKkt(_) => "singular_kkt",
            Error::ProjectionDivergence { .. } => "projection_divergence",
            Error::ProjectionNotConverged { .. } => "projection_not_converged",
            Error::LineSearch { .. } => "line_search",
            Error::MonotoneDescent { .. } => "monotone_descent",
            Error::Precondition(_) => "precondition",
            Error::CannotInitialize(_) => "cannot_initialize",
            Error::Solver { .. } => "solver",
            Error::Config { .. } => "config",
            Error::Parse(_) => "parse",
            Error::Csv(_) => "csv",
            Error::Io(_) => "io",
        }
    }
}
