//! Finite-horizon backward recursion and its receding-horizon wrapper.
//!
//! For stages `k = T..1` the planner solves, at every conditioning state, the
//! stage problem with the reward field adjusted by the cost-to-go of later
//! stages:
//!
//! ```text
//! cost_to_go[T](x) = 0
//! stage_reward_k(x') = reward_k(x') - cost_to_go[k](x')
//! cost_to_go[k-1](x) = optimal stage cost at (k, x)
//! ```
//!
//! The optimal total over the horizon from a known start state is then
//! `cost_to_go[0](start)`, read off the `k = 1` table entry.
//!
//! With a `restrict_to` scope, each stage processes exactly the states whose
//! successors all have a defined cost-to-go, so every computed entry is
//! identical to the unrestricted plan's. A scope containing the
//! `T`-hop reachable closure of the start always yields the start entry.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::behavior::{mix, BehaviorSet, ConditionalPmf, StageSpec};
use crate::graph::{StateId, StateSet};
use crate::objective::{ObjectiveError, StageInputs};
use crate::solver::{solve_stage, SolverConfig, SolverError};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("stage {stage} infeasible at state index {}: no source satisfies the chance constraint", state.index())]
    Infeasible { stage: usize, state: StateId },
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// A planning instance: behaviors plus one [`StageSpec`] per stage `1..=T`.
#[derive(Debug, Clone)]
pub struct PlanProblem<'a> {
    pub behaviors: &'a BehaviorSet,
    pub stages: Vec<StageSpec>,
    pub solver: SolverConfig,
}

impl<'a> PlanProblem<'a> {
    pub fn new(behaviors: &'a BehaviorSet, stages: Vec<StageSpec>) -> Result<Self, PlanError> {
        if stages.is_empty() {
            return Err(PlanError::EmptyHorizon);
        }
        Ok(Self {
            behaviors,
            stages,
            solver: SolverConfig::default(),
        })
    }

    /// Same stage snapshot repeated over `window` stages.
    pub fn repeated(
        behaviors: &'a BehaviorSet,
        stage: &StageSpec,
        window: usize,
    ) -> Result<Self, PlanError> {
        Self::new(behaviors, vec![stage.clone(); window])
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }
}

/// Optimal weights, blended row and stage cost at one `(stage, state)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEntry {
    pub alpha: Vec<f64>,
    pub row: ConditionalPmf,
    /// Optimal stage cost, which is also the cost-to-go recorded for the
    /// previous stage.
    pub cost: f64,
    pub feasible: bool,
}

/// Per-(stage, state) results of a backward plan. Stage `k` lives at index
/// `k - 1`; entries exist for every state the plan's scope covered.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyTable {
    stages: Vec<std::collections::BTreeMap<StateId, PolicyEntry>>,
}

impl PolicyTable {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn entry(&self, stage: usize, state: StateId) -> Option<&PolicyEntry> {
        self.stages.get(stage.checked_sub(1)?)?.get(&state)
    }

    pub fn stage_entries(
        &self,
        stage: usize,
    ) -> impl Iterator<Item = (StateId, &PolicyEntry)> + '_ {
        self.stages[stage - 1].iter().map(|(s, e)| (*s, e))
    }

    /// Total objective of the planned behavior started at `start`.
    pub fn total_cost(&self, start: StateId) -> Option<f64> {
        self.entry(1, start).map(|e| e.cost)
    }
}

/// Per-(stage, state) optimizer: returns `None` when that stage problem is
/// infeasible, otherwise the chosen weights and their cost.
pub(crate) type StageOptimizer<'p> = dyn Fn(&StageInputs, &[StateId], &StateSet, f64) -> Result<Option<(Vec<f64>, f64)>, PlanError>
    + 'p;

/// Shared backward-recursion driver: the full solver and the single-source
/// baseline differ only in the per-stage optimizer they plug in, so the
/// cost-to-go propagation is identical by construction.
pub(crate) fn plan_recursion(
    problem: &PlanProblem,
    restrict_to: Option<&StateSet>,
    optimize: &StageOptimizer,
) -> Result<PolicyTable, PlanError> {
    let behaviors = problem.behaviors;
    let graph = behaviors.graph();
    let horizon = problem.horizon();
    let in_scope = |state: StateId| restrict_to.is_none_or(|set| set.contains(&state));

    // cost_to_go[x] = None marks "not computed at this stage", which happens
    // only under restriction; the final stage starts defined everywhere.
    let mut cost_to_go: Vec<Option<f64>> = vec![Some(0.0); graph.state_count()];
    let mut stages: Vec<std::collections::BTreeMap<StateId, PolicyEntry>> =
        vec![Default::default(); horizon];

    for k in (1..=horizon).rev() {
        let spec = &problem.stages[k - 1];
        let mut next_cost_to_go: Vec<Option<f64>> = vec![None; graph.state_count()];
        let table = &mut stages[k - 1];

        for state in graph.states() {
            if !in_scope(state) {
                continue;
            }
            let successors = graph.successors(state);
            let stage_rewards: Option<Vec<f64>> = successors
                .iter()
                .map(|s| cost_to_go[s.index()].map(|ctg| spec.rewards[s.index()] - ctg))
                .collect();
            // A successor without cost-to-go means this state is outside the
            // usable scope at this stage; skip it rather than guess.
            let Some(stage_rewards) = stage_rewards else {
                continue;
            };

            let source_rows = behaviors.source_rows(state);
            let target_row = behaviors.target().row(state);
            let inputs = StageInputs::new(source_rows, target_row, stage_rewards)?;
            let Some((alpha, cost)) = optimize(&inputs, successors, &spec.safe_set, spec.epsilon)?
            else {
                return Err(PlanError::Infeasible { stage: k, state });
            };
            let row = mix(inputs.source_rows(), &alpha).expect("optimizer weights lie on simplex");
            next_cost_to_go[state.index()] = Some(cost);
            table.insert(
                state,
                PolicyEntry {
                    alpha,
                    row,
                    cost,
                    feasible: true,
                },
            );
        }
        cost_to_go = next_cost_to_go;
    }

    Ok(PolicyTable { stages })
}

/// Backward plan with the full stage solver at every `(stage, state)`.
///
/// `restrict_to`, when given, must contain every state reachable from the
/// intended start within the horizon; computed entries match the
/// unrestricted plan exactly.
pub fn backward_plan(
    problem: &PlanProblem,
    restrict_to: Option<&StateSet>,
) -> Result<PolicyTable, PlanError> {
    let cfg = problem.solver.clone();
    plan_recursion(problem, restrict_to, &move |inputs, succs, safe, eps| {
        let sol = solve_stage(inputs, succs, safe, eps, &cfg)?;
        Ok(sol.feasible.then_some((sol.alpha_star, sol.cost_star)))
    })
}

/// One receding-horizon step: plans over the `window`-hop reachable closure
/// of `current_state` and returns the stage-1 blended row there.
pub fn receding_step(
    behaviors: &BehaviorSet,
    stage: &StageSpec,
    solver: &SolverConfig,
    current_state: StateId,
    window: usize,
) -> Result<ConditionalPmf, PlanError> {
    let mut problem = PlanProblem::repeated(behaviors, stage, window)?;
    problem.solver = solver.clone();
    let scope = behaviors.graph().reachable_within(current_state, window);
    let table = backward_plan(&problem, Some(&scope))?;
    Ok(table
        .entry(1, current_state)
        .expect("start state is always in scope at stage 1")
        .row
        .clone())
}

/// Samples a successor according to `row`; advances the generator
/// deterministically.
pub fn sample_next(row: &ConditionalPmf, successors: &[StateId], rng: &mut ChaCha8Rng) -> StateId {
    debug_assert_eq!(row.len(), successors.len());
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = successors[0];
    for (&p, &s) in row.probs().iter().zip(successors) {
        if p > 0.0 {
            acc += p;
            last_positive = s;
            if u < acc {
                return s;
            }
        }
    }
    // Rounding left acc marginally below 1: the draw belongs to the tail.
    last_positive
}
