//! Single-source baseline: the same backward recursion, restricted to binary
//! weight vectors (exactly one source per stage and state).
//!
//! Binary vectors are the simplex vertices, so the baseline searches a
//! feasibility domain contained in the blended problem's; its total cost can
//! never beat the blended plan. It exists as the comparison algorithm.

use crate::behavior::ConditionalPmf;
use crate::graph::{StateId, StateSet};
use crate::objective::{stage_cost, ExtReal, StageInputs};
use crate::planner::{plan_recursion, PlanError, PlanProblem, PolicyTable};
use crate::solver::safe_masses;

/// Picks the cheapest single source among those satisfying the chance
/// constraint alone; ties break to the lowest index. `None` when no source
/// qualifies, which coincides exactly with stage infeasibility.
pub fn select_source(
    inputs: &StageInputs,
    successors: &[StateId],
    safe_set: &StateSet,
    epsilon: f64,
) -> Result<Option<(usize, f64)>, PlanError> {
    let masses = safe_masses(inputs.source_rows(), successors, safe_set);
    let bound = 1.0 - epsilon;
    let mut best: Option<(usize, f64)> = None;
    for i in 0..inputs.source_count() {
        if masses[i] < bound {
            continue;
        }
        let mut weights = vec![0.0; inputs.source_count()];
        weights[i] = 1.0;
        let cost = match stage_cost(&weights, inputs).map_err(crate::solver::SolverError::from)? {
            ExtReal::Finite(v) => v,
            ExtReal::PosInf => f64::INFINITY,
        };
        if best.is_none_or(|(_, bc)| cost < bc) {
            best = Some((i, cost));
        }
    }
    Ok(best)
}

/// Backward plan where every stage picks one source instead of blending.
/// Cost-to-go propagates from the binary optima, so the comparison against
/// the blended planner isolates the binary restriction.
pub fn backward_plan_binary(
    problem: &PlanProblem,
    restrict_to: Option<&StateSet>,
) -> Result<PolicyTable, PlanError> {
    plan_recursion(problem, restrict_to, &|inputs, succs, safe, eps| {
        Ok(select_source(inputs, succs, safe, eps)?.map(|(index, cost)| {
            let mut weights = vec![0.0; inputs.source_count()];
            weights[index] = 1.0;
            (weights, cost)
        }))
    })
}

/// The blended row a binary plan induces is just the selected source's row.
pub fn selected_row<'a>(inputs: &StageInputs<'a>, index: usize) -> &'a ConditionalPmf {
    inputs.source_rows()[index]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::{Behavior, BehaviorSet, StageSpec};
    use crate::graph::LinkGraph;
    use crate::planner::backward_plan;
    use crate::solver::{solve_stage, SolverConfig};

    fn square() -> LinkGraph {
        LinkGraph::new(vec![
            ("a".into(), vec!["b".into(), "c".into()]),
            ("b".into(), vec!["a".into(), "d".into()]),
            ("c".into(), vec!["a".into(), "d".into()]),
            ("d".into(), vec!["b".into(), "c".into()]),
        ])
        .unwrap()
    }

    fn row(origin: usize, probs: &[f64]) -> ConditionalPmf {
        ConditionalPmf::new(StateId(origin), probs.to_vec()).unwrap()
    }

    fn skewed_set(graph: &LinkGraph) -> BehaviorSet {
        let lean_first = Behavior::new(
            graph,
            (0..4).map(|i| row(i, &[0.8, 0.2])).collect(),
        )
        .unwrap();
        let lean_second = Behavior::new(
            graph,
            (0..4).map(|i| row(i, &[0.15, 0.85])).collect(),
        )
        .unwrap();
        let target = Behavior::new(graph, (0..4).map(|i| row(i, &[0.5, 0.5])).collect()).unwrap();
        BehaviorSet::new(graph.clone(), vec![lean_first, lean_second], target).unwrap()
    }

    #[test]
    fn single_source_selects_index_zero() {
        let g = square();
        let a = g.lookup("a").unwrap();
        let set = BehaviorSet::new(
            g.clone(),
            vec![Behavior::uniform(&g)],
            Behavior::uniform(&g),
        )
        .unwrap();
        let inputs = StageInputs::new(
            set.source_rows(a),
            set.target().row(a),
            vec![0.0, 0.0],
        )
        .unwrap();
        let picked = select_source(&inputs, g.successors(a), &g.states().collect(), 1.0)
            .unwrap()
            .unwrap();
        assert_eq!(picked.0, 0);
    }

    #[test]
    fn matching_source_wins_with_zero_cost() {
        let g = square();
        let a = g.lookup("a").unwrap();
        let set = skewed_set(&g);
        let matching = row(0, &[0.5, 0.5]);
        let rows = vec![set.source_rows(a)[0], &matching];
        let inputs = StageInputs::new(rows, set.target().row(a), vec![0.0, 0.0]).unwrap();
        let (index, cost) = select_source(&inputs, g.successors(a), &g.states().collect(), 1.0)
            .unwrap()
            .unwrap();
        assert_eq!(index, 1);
        assert!(cost.abs() < 1e-15);
    }

    #[test]
    fn selection_never_beats_the_blended_solve() {
        let g = square();
        let a = g.lookup("a").unwrap();
        let set = skewed_set(&g);
        let inputs = StageInputs::new(
            set.source_rows(a),
            set.target().row(a),
            vec![0.4, -0.2],
        )
        .unwrap();
        let all: StateSet = g.states().collect();
        let (_, binary_cost) = select_source(&inputs, g.successors(a), &all, 1.0)
            .unwrap()
            .unwrap();
        let blended = solve_stage(&inputs, g.successors(a), &all, 1.0, &SolverConfig::default())
            .unwrap();
        assert!(binary_cost >= blended.cost_star - 1e-8);
    }

    #[test]
    fn single_source_plans_are_identical() {
        let g = square();
        let set = BehaviorSet::new(
            g.clone(),
            vec![Behavior::uniform(&g)],
            Behavior::uniform(&g),
        )
        .unwrap();
        let spec = StageSpec::unconstrained(&g);
        let problem = PlanProblem::new(&set, vec![spec.clone(), spec]).unwrap();
        let blended = backward_plan(&problem, None).unwrap();
        let binary = backward_plan_binary(&problem, None).unwrap();
        for k in 1..=2 {
            for state in g.states() {
                let b = blended.entry(k, state).unwrap();
                let s = binary.entry(k, state).unwrap();
                assert!((b.cost - s.cost).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_sources_tie_the_planners() {
        let g = square();
        let table = Behavior::new(&g, (0..4).map(|i| row(i, &[0.7, 0.3])).collect()).unwrap();
        let set = BehaviorSet::new(
            g.clone(),
            vec![table.clone(), table.clone()],
            Behavior::uniform(&g),
        )
        .unwrap();
        let spec = StageSpec::unconstrained(&g);
        let problem = PlanProblem::new(&set, vec![spec.clone(), spec]).unwrap();
        let blended = backward_plan(&problem, None).unwrap();
        let binary = backward_plan_binary(&problem, None).unwrap();
        let a = g.lookup("a").unwrap();
        let cb = blended.total_cost(a).unwrap();
        let cs = binary.total_cost(a).unwrap();
        assert!((cb - cs).abs() < 1e-8);
    }

    #[test]
    fn blending_beats_selection_when_target_straddles_sources() {
        let g = square();
        let set = skewed_set(&g);
        let spec = StageSpec::unconstrained(&g);
        let problem = PlanProblem::new(&set, vec![spec.clone(), spec]).unwrap();
        let blended = backward_plan(&problem, None).unwrap();
        let binary = backward_plan_binary(&problem, None).unwrap();
        let a = g.lookup("a").unwrap();
        let cb = blended.total_cost(a).unwrap();
        let cs = binary.total_cost(a).unwrap();
        assert!(cb <= cs + 1e-8);
        assert!(cs - cb > 1e-3, "blend {cb} vs binary {cs}");
    }
}
