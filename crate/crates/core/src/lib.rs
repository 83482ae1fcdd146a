//! Final-state constrained projection-operator Newton method (fsPRONTO) for
//! continuous-time optimal control with fixed initial and terminal states.
//!
//! The pipeline: a [`model::DynamicsModel`] and [`cost::RunningCost`] define a
//! [`fspronto::Problem`]; [`fspronto::solve`] iterates descent directions from
//! LQ state-transfer subproblems ([`lq`]), backtracking on the tracking
//! projection ([`projection::project`]) and updating through the constrained
//! projection ([`projection::constrained_project`]), so every iterate is a
//! trajectory that reaches the terminal state.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod cost;
pub mod error;
pub mod fspronto;
pub mod grid;
pub mod linalg;
pub mod lq;
pub mod model;
pub mod projection;
pub mod transcription;

pub use config::{parse_config, Experiment, ProblemConfig};
pub use cost::{Costate, HessianMode, QuadApprox, QuadraticTrackingCost, RunningCost};
pub use error::{Error, Result};
pub use fspronto::{IterationRecord, Problem, SolveOutcome, SolveStatus, SolverOptions};
pub use grid::{MatrixSignal, Signal, TimeGrid, VectorSignal};
pub use lq::{LqProblem, LqSolution, RiccatiSolution, Terminal};
pub use model::{DynamicsModel, LinearModel, LtvData, PendulumModel};
pub use projection::{Curve, FeedbackGain, Trajectory};
