//! Symbolic jet calculus and checking of vertical symmetries for
//! one-dimensional second-order evolution systems with boundary control,
//! plus the numeric machinery to watch those symmetries act on simulated
//! trajectories.
//!
//! The crate is organised bottom-up:
//!
//! * [`coord`] / [`expr`] / [`parse`] — jet coordinates, exact canonical
//!   expressions, and the concrete syntax for both.
//! * [`sample`] — the seeded randomized zero test backing every verdict
//!   that exact cancellation cannot decide.
//! * [`jet`] — total derivatives, prolongation of vertical fields, Lie
//!   derivatives, and the numeric flow of a field.
//! * [`system`] — the evolution-system class and its submanifold
//!   reductions (domain and boundary).
//! * [`checker`] — the symmetry and non-observability condition checkers.
//! * [`linalg`] / [`determining`] — exact linear algebra and the
//!   determining-equation solver that searches an ansatz space for fields.
//! * [`compile`] / [`sim`] — a slot-indexed expression compiler and the
//!   method-of-lines simulator with its indistinguishability experiment.

pub mod checker;
pub mod compile;
pub mod coord;
pub mod determining;
pub mod error;
pub mod expr;
pub mod jet;
pub mod linalg;
pub mod parse;
pub mod sample;
pub mod sim;
pub mod system;

pub use checker::{
    check_nonobservability, check_symmetry, Aggregate, CheckOptions, CheckReport,
    ConditionEntry, ConditionId, ConditionVerdict,
};
pub use compile::Compiled;
pub use coord::{CoordRole, Independent, JetContext, JetCoordinate};
pub use determining::{
    filter_solutions, generate, matches_up_to_scale, solve, Ansatz, DeterminingSystem,
    Provenance, Strategy, Survivor,
};
pub use error::CoreError;
pub use expr::{canonicalize, derive, eval, substitute, Expr, Rat, UnaryFn};
pub use jet::{lie_derivative, prolong, total_derivative, ProlongedField, VerticalField};
pub use parse::parse;
pub use sample::{is_zero, Sampler, ZeroVerdict, DEFAULT_SEED};
pub use sim::{
    indist_experiment, residual_check, simulate, transform_initial, Grid, IndistReport,
    IndistRun, SimConfig, Trajectory,
};
pub use system::{
    boundary_reduce, build_reduction, reduce, BoundarySide, ReductionMap, SystemSpec,
};
