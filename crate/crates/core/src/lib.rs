//! Direct estimation of individualized probability dose intervals.
//!
//! A bound function `f(x)` is learned so that doses inside `[f(x), a_U]`
//! (or `[a_L, f(x)]`, or a two-sided band) give a favourable outcome
//! `Y > S(x)` with probability at least `alpha`. The 0-1 objective is
//! replaced by a truncated hinge, split as a difference of convex functions
//! and minimized by solving one box-constrained dual QP per DC step.

pub mod dc;
pub mod error;
pub mod eval;
pub mod indirect;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod loss;
pub mod par;
pub mod qp;
pub mod simulation;
pub mod types;
pub mod weights;

pub use dc::{estimate_midpoint, fit_lower, fit_two_sided, fit_upper, DcTrace};
pub use error::{PdiError, Result};
pub use eval::{
    benchmark, cross_validate, empirical_risk, fit_policy, BenchmarkConfig, BenchmarkRow,
    FitSettings, FittedPolicy, Method, RiskReport, WeightSource,
};
pub use indirect::{fit_indirect, IndirectModel};
pub use linalg::Matrix;
pub use qp::{solve_qp, QpProblem, QpSolution};
pub use simulation::{generate, Scenario, ScenarioSpec};
pub use types::{
    BoundFunction, Dataset, DoseBounds, IntervalPolicy, IntervalPolicyModel, KernelSpec, Side,
    SurrogateConfig, ThresholdSpec,
};
