//! Optimal behavior composition over finite state graphs.
//!
//! An agent on a directed graph of road links blends transition rows from
//! several source behaviors into its own behavior, one convex combination per
//! state and stage. The blend tracks a target behavior (divergence cost),
//! collects state rewards, and keeps the next state inside a safe set with
//! prescribed probability. Each stage reduces to a small convex program over
//! the weight simplex; a backward recursion propagates the optimal stage
//! costs so the stitched stage solutions are optimal over the whole horizon.
//!
//! Crate layout:
//!
//! - [`graph`], [`behavior`]: state graphs, conditional rows, behavior sets,
//!   validation and smoothing.
//! - [`objective`]: divergence, stage cost, analytic gradient and Hessian.
//! - [`solver`]: the per-stage solver, its feasibility test, and an
//!   exhaustive grid oracle for verification.
//! - [`planner`], [`baseline`]: the backward recursion, the receding-horizon
//!   wrapper, and the single-source baseline it is benchmarked against.
//! - [`sim`]: a deterministic routing/parking simulator exercising the
//!   planners under arrivals, lot capacities and obstructions.
//! - [`bench`]: the decision-time study over source count and horizon.
//! - [`io`]: file formats and CSV/JSON writers.

pub mod baseline;
pub mod behavior;
pub mod bench;
pub mod graph;
pub mod io;
pub mod objective;
pub mod planner;
pub mod sim;
pub mod solver;

pub use behavior::{
    mix, smooth_behavior, support_mass, validate_behavior, Behavior, BehaviorError, BehaviorSet,
    ConditionalPmf, StageSpec, ValidationReport,
};
pub use graph::{LinkGraph, StateId, StateSet};
pub use objective::{kl_divergence, stage_cost, stage_gradient, stage_hessian, ExtReal, StageInputs};
pub use planner::{backward_plan, receding_step, sample_next, PlanError, PlanProblem, PolicyTable};
pub use solver::{check_feasibility, grid_oracle, solve_stage, SolverConfig, StageSolution};
